#include "pianofill/service/api.hpp"

#include <algorithm>
#include <cmath>

namespace pianofill::service {

using nlohmann::json;

namespace {

std::string join_messages(const std::vector<FieldError>& d) {
  std::string s = "invalid request";
  for (const auto& e : d) s += "; " + e.path + ": " + e.message;
  return s;
}

class Checker {
 public:
  std::vector<FieldError> errors;

  void fail(const std::string& path, const std::string& message) { errors.push_back({path, message}); }

  const json* field(const json& obj, const std::string& base, const char* key, bool required) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
      if (required) fail(base + "/" + key, "required");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> number(const json& obj, const std::string& base, const char* key, bool required) {
    const json* v = field(obj, base, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      fail(base + "/" + key, "expected a number");
      return std::nullopt;
    }
    const double d = v->get<double>();
    if (!std::isfinite(d)) {
      fail(base + "/" + key, "must be finite");
      return std::nullopt;
    }
    return d;
  }

  std::optional<std::int64_t> integer(const json& obj, const std::string& base, const char* key, bool required,
                                      std::int64_t lo, std::int64_t hi) {
    const json* v = field(obj, base, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) {
      fail(base + "/" + key, "expected an integer");
      return std::nullopt;
    }
    const auto i = v->is_number_unsigned() && v->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)
                       ? INT64_MAX
                       : v->get<std::int64_t>();
    if (i < lo || i > hi) {
      fail(base + "/" + key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return std::nullopt;
    }
    return i;
  }

  std::optional<std::string> string(const json& obj, const std::string& base, const char* key) {
    const json* v = field(obj, base, key, false);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      fail(base + "/" + key, "expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }
};

}  // namespace

ApiError::ApiError(std::vector<FieldError> details) : std::invalid_argument(join_messages(details)), details_(std::move(details)) {}

inference::InpaintRequest parse_inpaint_request(const json& body, std::uint64_t default_seed) {
  Checker c;
  inference::InpaintRequest req;
  req.overflow = inference::Overflow::kTruncate;
  req.seed = default_seed;
  if (!body.is_object()) throw ApiError(std::vector<FieldError>{{"", "expected a JSON object"}});

  if (const json* notes = c.field(body, "", "notes", false)) {
    if (!notes->is_array()) {
      c.fail("/notes", "expected an array");
    } else {
      for (std::size_t i = 0; i < notes->size(); ++i) {
        const std::string base = "/notes/" + std::to_string(i);
        const json& n = (*notes)[i];
        if (!n.is_object()) {
          c.fail(base, "expected an object");
          continue;
        }
        const auto pitch = c.integer(n, base, "pitch", true, kLowestPitch, kHighestPitch);
        const auto vel = c.integer(n, base, "velocity", true, 0, 127);
        const auto onset = c.number(n, base, "onset_s", true);
        const auto dur = c.number(n, base, "duration_s", true);
        if (onset && *onset < 0) c.fail(base + "/onset_s", "must be >= 0");
        if (dur && *dur <= 0) c.fail(base + "/duration_s", "must be > 0");
        if (pitch && vel && onset && dur) {
          req.context.notes.push_back({static_cast<int>(*pitch), static_cast<int>(*vel), *onset, *dur});
        }
      }
    }
  }
  req.context.sort();

  if (const json* sel = c.field(body, "", "selection", true)) {
    if (!sel->is_object()) {
      c.fail("/selection", "expected an object");
    } else {
      const auto s = c.number(*sel, "/selection", "start_s", true);
      const auto e = c.number(*sel, "/selection", "end_s", true);
      if (s) req.start_s = *s;
      if (e) req.end_s = *e;
    }
  }
  if (const auto n = c.integer(body, "", "note_count", false, 0, INT32_MAX)) req.note_count = static_cast<int>(*n);
  if (const auto d = c.number(body, "", "density", false)) {
    if (*d < 0) c.fail("/density", "must be >= 0");
    req.density = *d;
  }
  if (req.note_count && req.density) c.fail("/density", "give either note_count or density, not both");
  if (const auto m = c.string(body, "", "mode")) {
    if (const auto mode = inference::parse_mode(*m)) {
      req.mode = *mode;
    } else {
      c.fail("/mode", "unknown mode '" + *m + "'");
    }
  }
  if (const auto p = c.number(body, "", "top_p", false)) {
    if (!(*p > 0 && *p <= 1)) c.fail("/top_p", "must lie in (0, 1]");
    req.top_p = *p;
  }
  if (const json* seed = c.field(body, "", "seed", false)) {
    if (!seed->is_number_unsigned() && !(seed->is_number_integer() && seed->get<std::int64_t>() >= 0)) {
      c.fail("/seed", "expected a non-negative integer");
    } else {
      req.seed = seed->get<std::uint64_t>();
    }
  }
  if (const auto o = c.string(body, "", "overflow")) {
    if (const auto ov = inference::parse_overflow(*o)) {
      req.overflow = *ov;
    } else {
      c.fail("/overflow", "unknown overflow policy '" + *o + "'");
    }
  }
  if (const json* v = c.field(body, "", "velocity_only", false)) {
    if (!v->is_boolean()) {
      c.fail("/velocity_only", "expected a boolean");
    } else {
      req.velocity_only = v->get<bool>();
    }
  }

  if (c.errors.empty()) {
    try {
      req.validate();
    } catch (const inference::RequestError& e) {
      c.fail("", e.what());
    }
  }
  if (!c.errors.empty()) throw ApiError(std::move(c.errors));
  return req;
}

double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

json note_to_json(const NoteEvent& n) {
  return {{"pitch", n.pitch}, {"velocity", n.velocity}, {"onset_s", round_ms(n.onset_s)},
          {"duration_s", std::max(round_ms(n.duration_s), 0.001)}};
}

json performance_to_json(const Performance& p) {
  json notes = json::array();
  for (const auto& n : p.notes) notes.push_back(note_to_json(n));
  return notes;
}

json error_body(const std::string& code, const std::string& message, const std::vector<FieldError>& details) {
  json j = {{"error", code}, {"message", message}};
  if (!details.empty()) {
    j["details"] = json::array();
    for (const auto& d : details) j["details"].push_back({{"path", d.path}, {"message", d.message}});
  }
  return j;
}

}  // namespace pianofill::service
