#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuroens/trainer.hpp"

namespace neuroens {

inline constexpr const char* kResultHeader =
    "model,smoothed,pretrained,learning_rate,acc_mean,acc_std,rep_accuracies";

/// Model 1 rows must carry no smoothed flag.
void validate(const ResultTable& t);

/// Delimited text; reals at full precision, rep_accuracies ';'-separated.
std::string results_to_csv(const ResultTable& t);
ResultTable results_from_csv(const std::string& text);
void save_results(const ResultTable& t, const std::filesystem::path& path);
ResultTable load_results(const std::filesystem::path& path);

/// Per-epoch history of every run: lr_index,learning_rate,repetition,epoch,train_loss,train_accuracy,val_accuracy.
void save_history(const std::vector<RunLog>& runs, const std::filesystem::path& path);

/// Aligned text table: Model | Use Smoothed Scan | Pre Trained | Learning Rate | Accuracy,
/// accuracy as "mean ± std" to 4 decimals.
std::string render_results(const ResultTable& t);

/// Numeric fields of a rendered table, to the printed precision (rep_accuracies empty).
ResultTable parse_rendered(const std::string& text);

}  // namespace neuroens
