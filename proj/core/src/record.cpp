#include "deepdiver/record.hpp"

#include <fstream>
#include <set>

#include "deepdiver/common.hpp"

namespace deepdiver::dataset {

using nlohmann::json;

const char* to_string(Category c) {
    switch (c) {
        case Category::CrossPageQA: return "CrossPageQA";
        case Category::OpenRiddle: return "OpenRiddle";
        case Category::WikiRiddle: return "WikiRiddle";
        case Category::Other: return "Other";
    }
    return "Other";
}

const char* to_string(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return "Easy";
        case Difficulty::Medium: return "Medium";
        case Difficulty::Hard: return "Hard";
        case Difficulty::Outlier: return "Outlier";
    }
    return "Outlier";
}

Category category_from_string(std::string_view name) {
    for (Category c : kAllCategories) {
        if (name == to_string(c)) return c;
    }
    throw DataError("unknown category '" + std::string(name) + "'");
}

Difficulty difficulty_from_string(std::string_view name) {
    for (Difficulty d : kAllDifficulties) {
        if (name == to_string(d)) return d;
    }
    throw DataError("unknown difficulty '" + std::string(name) + "'");
}

void validate(const QARecord& record) {
    if (record.id.empty()) throw DataError("record id must be non-empty");
    if (record.question.empty()) throw DataError("record '" + record.id + "' has an empty question");
    if (record.solution.empty()) throw DataError("record '" + record.id + "' has an empty solution");
}

json to_json(const QARecord& r) {
    return {{"id", r.id},
            {"question", r.question},
            {"solution", r.solution},
            {"checklist", r.checklist},
            {"category", to_string(r.category)},
            {"difficulty", r.difficulty ? json(to_string(*r.difficulty)) : json(nullptr)},
            {"language", r.language}};
}

QARecord record_from_json(const json& doc) {
    QARecord r;
    try {
        r.id = doc.at("id").get<std::string>();
        r.question = doc.at("question").get<std::string>();
        r.solution = doc.at("solution").get<std::string>();
        r.checklist = doc.value("checklist", std::vector<std::string>{});
        r.category = category_from_string(doc.value("category", std::string("Other")));
        if (doc.contains("difficulty") && !doc.at("difficulty").is_null()) {
            r.difficulty = difficulty_from_string(doc.at("difficulty").get<std::string>());
        }
        r.language = doc.value("language", std::string("zh"));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed record: ") + e.what());
    }
    validate(r);
    return r;
}

std::vector<QARecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open records file: " + path);
    std::vector<QARecord> records;
    std::set<std::string> ids;
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
        if (trim(line).empty()) continue;
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(records.back().id).second) {
            throw DataError(path + ":" + std::to_string(line_no) + ": duplicate record id '" + records.back().id + "'");
        }
    }
    return records;
}

void write_records(const std::string& path, const std::vector<QARecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write records file: " + path);
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace deepdiver::dataset
