#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace deepdiver::dataset {

enum class Category { CrossPageQA, OpenRiddle, WikiRiddle, Other };
enum class Difficulty { Easy, Medium, Hard, Outlier };

inline constexpr Category kAllCategories[] = {Category::CrossPageQA, Category::OpenRiddle, Category::WikiRiddle,
                                              Category::Other};
inline constexpr Difficulty kAllDifficulties[] = {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard,
                                                  Difficulty::Outlier};

const char* to_string(Category c);
const char* to_string(Difficulty d);
/// Throws DataError on unknown names.
Category category_from_string(std::string_view name);
Difficulty difficulty_from_string(std::string_view name);

/// One WebPuzzle-style task.
struct QARecord {
    std::string id;
    std::string question;
    std::string solution;
    std::vector<std::string> checklist;
    Category category = Category::Other;
    std::optional<Difficulty> difficulty;
    std::string language = "zh";

    bool operator==(const QARecord&) const = default;
};

/// Throws DataError when id, question or solution is empty.
void validate(const QARecord& record);

nlohmann::json to_json(const QARecord& record);
QARecord record_from_json(const nlohmann::json& doc);

/// Line-delimited JSON, one record per line. Blank lines are skipped.
/// Duplicate ids are rejected. Errors carry the 1-based line number.
std::vector<QARecord> read_records(const std::string& path);
void write_records(const std::string& path, const std::vector<QARecord>& records);

}  // namespace deepdiver::dataset
