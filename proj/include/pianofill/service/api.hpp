#pragma once

// JSON payloads of the HTTP API.
//
// Request body:
//   {"notes": [{"pitch", "velocity", "onset_s", "duration_s"}...],
//    "selection": {"start_s", "end_s"},
//    "note_count": int | "density": notes per second,
//    "mode": "contiguous" (default) | "unconditional" | "velocify" | "pitchify" | "variation",
//    "top_p": 0.95, "seed": uint64 (random when absent),
//    "overflow": "truncate" (default) | "rescale" | "free", "velocity_only": false}

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "pianofill/inference/engine.hpp"

namespace pianofill::service {

struct FieldError {
  std::string path;  // JSON pointer
  std::string message;
};

class ApiError : public std::invalid_argument {
 public:
  explicit ApiError(std::vector<FieldError> details);
  const std::vector<FieldError>& details() const { return details_; }

 private:
  std::vector<FieldError> details_;
};

/// Validates the body and converts it. Throws ApiError listing every problem
/// found, including those reported by InpaintRequest::validate.
inference::InpaintRequest parse_inpaint_request(const nlohmann::json& body, std::uint64_t default_seed);

/// Seconds are rounded to 1 ms.
double round_ms(double seconds);
nlohmann::json note_to_json(const NoteEvent& n);
nlohmann::json performance_to_json(const Performance& p);

nlohmann::json error_body(const std::string& code, const std::string& message,
                          const std::vector<FieldError>& details = {});

}  // namespace pianofill::service
