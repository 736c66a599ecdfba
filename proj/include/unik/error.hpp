#pragma once

#include <stdexcept>
#include <string>

namespace unik {

// Error taxonomy mirrored by the CLI exit codes: config 1, data 2, checkpoint 3.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatches inside the numeric core.
class dim_error : public std::runtime_error {
 public:
  explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

class checkpoint_error : public std::runtime_error {
 public:
  enum class kind { bad_magic, bad_version, bad_fingerprint, corrupt, tensor_mismatch, io };

  checkpoint_error(kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  kind error_kind() const { return kind_; }

 private:
  kind kind_;
};

}  // namespace unik
