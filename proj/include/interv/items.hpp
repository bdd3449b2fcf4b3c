#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "interv/io.hpp"

namespace interv {

/// One evaluation item: a question with candidate answers. Relation-style
/// items also carry the subject/object strings used for entity search.
struct eval_item {
    std::string item_id;
    std::string question;
    std::vector<std::string> choices;
    std::size_t answer_index = 0;
    std::optional<std::string> subject;
    std::optional<std::string> object;
    std::optional<std::string> relation;
    std::optional<std::string> dataset;

    const std::string& answer() const { return choices.at(answer_index); }

    void validate() const {
        if (item_id.empty()) throw error("items", "item with empty item_id");
        if (choices.size() < 2) throw error("items", item_id + ": needs at least 2 choices");
        for (const auto& c : choices)
            if (c.empty()) throw error("items", item_id + ": empty choice");
        if (answer_index >= choices.size())
            throw error("items", item_id + ": answer_index out of range");
    }
};

inline json to_json(const eval_item& it) {
    json j = {{"item_id", it.item_id},
              {"question", it.question},
              {"choices", it.choices},
              {"answer_index", it.answer_index}};
    if (it.subject) j["subject"] = *it.subject;
    if (it.object) j["object"] = *it.object;
    if (it.relation) j["relation"] = *it.relation;
    if (it.dataset) j["dataset"] = *it.dataset;
    return j;
}

inline eval_item item_from_json(const json& j) {
    eval_item it;
    it.item_id = j.at("item_id").get<std::string>();
    it.question = j.at("question").get<std::string>();
    it.choices = j.at("choices").get<std::vector<std::string>>();
    it.answer_index = j.at("answer_index").get<std::size_t>();
    auto opt = [&](const char* k) -> std::optional<std::string> {
        if (j.contains(k) && !j[k].is_null()) return j[k].get<std::string>();
        return std::nullopt;
    };
    it.subject = opt("subject");
    it.object = opt("object");
    it.relation = opt("relation");
    it.dataset = opt("dataset");
    it.validate();
    return it;
}

inline std::vector<eval_item> load_items(const std::filesystem::path& path) {
    std::vector<eval_item> out;
    for_each_record(path, "items", [&](const json& r, std::size_t) { out.push_back(item_from_json(r)); });
    return out;
}

inline void save_items(const std::filesystem::path& path, const std::vector<eval_item>& items) {
    std::vector<json> recs;
    recs.reserve(items.size());
    for (const auto& it : items) recs.push_back(to_json(it));
    write_records(path, recs);
}

}  // namespace interv
