#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <thread>

#include "pianofill/model/checkpoint.hpp"
#include "pianofill/service/api.hpp"
#include "pianofill/service/server.hpp"

// After Eigen: resolv.h defines a macro named _res.
#include <httplib.h>
#include <set>

namespace {

using namespace pianofill;
using nlohmann::json;

struct Event {
  std::string name;
  json data;
};

std::vector<Event> parse_sse(const std::string& body) {
  std::vector<Event> out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const std::size_t end = body.find("\n\n", pos);
    if (end == std::string::npos) break;
    const std::string block = body.substr(pos, end - pos);
    pos = end + 2;
    Event e;
    std::size_t line_start = 0;
    while (line_start < block.size()) {
      std::size_t nl = block.find('\n', line_start);
      if (nl == std::string::npos) nl = block.size();
      const std::string line = block.substr(line_start, nl - line_start);
      if (line.rfind("event: ", 0) == 0) e.name = line.substr(7);
      if (line.rfind("data: ", 0) == 0) e.data = json::parse(line.substr(6));
      line_start = nl + 1;
    }
    out.push_back(e);
  }
  return out;
}

model::ModelParams<float> toy_params(std::uint64_t seed = 5) {
  Rng rng(seed);
  return model::ModelParams<float>::initialize(model::ModelConfig::toy(), rng);
}

json context_json(int notes) {
  json arr = json::array();
  for (int i = 0; i < notes; ++i) {
    arr.push_back({{"pitch", 50 + i % 20}, {"velocity", 60 + i}, {"onset_s", 0.25 * i}, {"duration_s", 0.2}});
  }
  return arr;
}

class ServiceTest : public ::testing::Test {
 protected:
  void start(std::shared_ptr<const service::LoadedModel> model, int max_sessions = 4) {
    service::ServerOptions opt;
    opt.port = 0;
    opt.max_sessions = max_sessions;
    opt.cors_origin = "http://localhost:5173";
    server_ = std::make_unique<service::Server>(opt, std::move(model));
    port_ = server_->start();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30);
    return c;
  }
  httplib::Result post(const json& body) const { return client().Post("/v1/inpaint", body.dump(), "application/json"); }

  std::unique_ptr<service::Server> server_;
  int port_ = 0;
};

TEST_F(ServiceTest, HealthWithoutModelIs503) {
  start(nullptr);
  auto res = client().Get("/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
  auto inp = post({{"notes", json::array()}, {"selection", {{"start_s", 0}, {"end_s", 1}}}, {"note_count", 1}});
  ASSERT_TRUE(inp);
  EXPECT_EQ(inp->status, 503);
}

TEST_F(ServiceTest, HealthReportsCheckpointDigest) {
  const auto path = std::filesystem::temp_directory_path() / "pianofill_health_test.ckpt";
  model::save_checkpoint(path.string(), toy_params(), model::ModelConfig::toy(), 42);
  start(service::load_model(path.string()));
  auto res = client().Get("/v1/health");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const json body = json::parse(res->body);
  EXPECT_EQ(body["model"], "pianofill_health_test.ckpt");
  EXPECT_EQ(body["step"], 42);
  EXPECT_EQ(body["config"]["model_dim"], 8);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");

  // Independent digest from coreutils.
  std::string digest;
  if (FILE* p = popen(("sha256sum " + path.string()).c_str(), "r")) {
    char buf[65] = {};
    if (std::fread(buf, 1, 64, p) == 64) digest = buf;
    pclose(p);
  }
  if (digest.empty()) GTEST_SKIP() << "sha256sum unavailable";
  EXPECT_EQ(body["checkpoint_sha256"], digest);
  std::filesystem::remove(path);
}

TEST_F(ServiceTest, PreflightAllowsPost) {
  start(nullptr);
  auto res = client().Options("/v1/inpaint");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(ServiceTest, RejectsMalformedRequests) {
  start(service::make_model("toy", model::ModelConfig::toy(), toy_params()));
  auto bad_json = client().Post("/v1/inpaint", "{not json", "application/json");
  ASSERT_TRUE(bad_json);
  EXPECT_EQ(bad_json->status, 400);
  EXPECT_EQ(json::parse(bad_json->body)["error"], "invalid_json");

  json body = {{"notes", {{{"pitch", 200}, {"velocity", 60}, {"onset_s", 0.0}}}}, {"mode", "remix"}};
  auto res = post(body);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  const json err = json::parse(res->body);
  std::set<std::string> paths;
  for (const auto& d : err["details"]) paths.insert(d["path"].get<std::string>());
  EXPECT_TRUE(paths.count("/notes/0/pitch"));
  EXPECT_TRUE(paths.count("/notes/0/duration_s"));
  EXPECT_TRUE(paths.count("/selection"));
  EXPECT_TRUE(paths.count("/mode"));

  json reversed = {{"notes", context_json(4)}, {"selection", {{"start_s", 2.0}, {"end_s", 1.0}}}, {"note_count", 2}};
  auto rev = post(reversed);
  ASSERT_TRUE(rev);
  EXPECT_EQ(rev->status, 400);
}

TEST_F(ServiceTest, ZeroNotesEchoesInput) {
  start(service::make_model("toy", model::ModelConfig::toy(), toy_params()));
  const json ctx = context_json(12);
  auto res = post({{"notes", ctx}, {"selection", {{"start_s", 1.0}, {"end_s", 2.0}}}, {"note_count", 0}});
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "text/event-stream");
  const auto events = parse_sse(res->body);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].name, "done");
  EXPECT_EQ(events[0].data["performance"], ctx);
  EXPECT_TRUE(events[0].data["time_to_first_note_s"].is_null());
}

TEST_F(ServiceTest, StreamsNotesInsideSelectionAndMatchesEngine) {
  auto model = service::make_model("toy", model::ModelConfig::toy(), toy_params());
  start(model);
  const json ctx = context_json(40);
  const json body = {{"notes", ctx}, {"selection", {{"start_s", 3.0}, {"end_s", 5.0}}}, {"density", 4.0},
                     {"seed", 17}};
  auto res = post(body);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto events = parse_sse(res->body);
  ASSERT_EQ(events.size(), 9u);
  double prev = -1.0;
  for (std::size_t i = 0; i + 1 < events.size(); ++i) {
    ASSERT_EQ(events[i].name, "note");
    const double onset = events[i].data["onset_s"];
    EXPECT_GE(onset, 3.0);
    EXPECT_LT(onset, 5.0);
    EXPECT_GE(onset, prev);
    prev = onset;
  }
  const json& done = events.back().data;
  ASSERT_EQ(events.back().name, "done");
  EXPECT_EQ(done["note_count"], 8);
  EXPECT_FALSE(done["rescaled"].get<bool>());
  EXPECT_GE(done["time_to_first_note_s"].get<double>(), 0.0);

  // Same request through the engine directly.
  const auto req = service::parse_inpaint_request(body, 0);
  const auto batch = model->engine->inpaint(req);
  EXPECT_EQ(done["performance"], service::performance_to_json(batch.performance));
  for (std::size_t i = 0; i + 1 < events.size(); ++i) EXPECT_EQ(events[i].data, service::note_to_json(batch.emitted[i]));
  // Context outside the selection is untouched.
  json kept = json::array();
  for (const auto& n : ctx) {
    if (n["onset_s"] < 3.0 || n["onset_s"] >= 5.0) kept.push_back(n);
  }
  json outside = json::array();
  for (const auto& n : done["performance"]) {
    if (n["onset_s"] < 3.0 || n["onset_s"] >= 5.0) outside.push_back(n);
  }
  EXPECT_EQ(outside, kept);
}

TEST_F(ServiceTest, ConcurrentStreamsStaySeparate) {
  auto model = service::make_model("toy", model::ModelConfig::toy(), toy_params());
  start(model, 8);
  std::vector<std::string> bodies(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      auto res = post({{"notes", context_json(30)}, {"selection", {{"start_s", 1.0}, {"end_s", 4.0}}},
                       {"note_count", 10}, {"seed", i}});
      if (res && res->status == 200) bodies[static_cast<std::size_t>(i)] = res->body;
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < 4; ++i) {
    const json body = {{"notes", context_json(30)}, {"selection", {{"start_s", 1.0}, {"end_s", 4.0}}},
                       {"note_count", 10}, {"seed", i}};
    const auto batch = model->engine->inpaint(service::parse_inpaint_request(body, 0));
    const auto events = parse_sse(bodies[static_cast<std::size_t>(i)]);
    ASSERT_EQ(events.size(), 11u) << "stream " << i;
    EXPECT_EQ(events.back().data["performance"], service::performance_to_json(batch.performance));
  }
}

TEST_F(ServiceTest, SessionLimitReturns429) {
  start(service::make_model("toy", model::ModelConfig::toy(), toy_params()), 0);
  auto res = post({{"notes", context_json(8)}, {"selection", {{"start_s", 0.5}, {"end_s", 1.0}}}, {"note_count", 2}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 429);
}

TEST_F(ServiceTest, GenerationAbortReturns500) {
  auto params = toy_params();
  params.heads[0].b(0, 0) = std::numeric_limits<float>::quiet_NaN();
  start(service::make_model("broken", model::ModelConfig::toy(), std::move(params)));
  auto res = post({{"notes", context_json(8)}, {"selection", {{"start_s", 0.5}, {"end_s", 1.0}}}, {"note_count", 2}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 500);
  const json err = json::parse(res->body);
  EXPECT_NE(err["message"].get<std::string>().find("non-finite"), std::string::npos);
  EXPECT_EQ(server_->active_sessions(), 0);
}

TEST(ApiPayload, RoundsToMilliseconds) {
  const json n = service::note_to_json({60, 70, 1.23449, 0.0004});
  EXPECT_DOUBLE_EQ(n["onset_s"].get<double>(), 1.234);
  EXPECT_DOUBLE_EQ(n["duration_s"].get<double>(), 0.001);
}

TEST(ApiPayload, DefaultsToTruncateAndContiguous) {
  const auto req = service::parse_inpaint_request(
      {{"notes", context_json(4)}, {"selection", {{"start_s", 0.0}, {"end_s", 1.0}}}, {"note_count", 3}}, 99);
  EXPECT_EQ(req.mode, inference::Mode::kContiguous);
  EXPECT_EQ(req.overflow, inference::Overflow::kTruncate);
  EXPECT_EQ(req.seed, 99u);
  EXPECT_DOUBLE_EQ(req.top_p, 0.95);
}

}  // namespace
