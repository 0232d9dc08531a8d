#pragma once

#include <stdexcept>
#include <string>

namespace neuroens {

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

enum class Label { PD, HC };
enum class Modality { WHOLE, GM, WM };

/// Class index used by the classifiers: PD = 0, HC = 1.
constexpr int class_index(Label l) { return l == Label::PD ? 0 : 1; }
constexpr Label label_from_index(int i) { return i == 0 ? Label::PD : Label::HC; }

std::string to_string(Label l);
std::string to_string(Modality m);
Label parse_label(const std::string& token);
Modality parse_modality(const std::string& token);

}  // namespace neuroens
