#include <gtest/gtest.h>
#include <httplib.h>

#include <filesystem>
#include <thread>

#include "json.hpp"
#include "ssn/checkpoint.hpp"
#include "ssn/http_service.hpp"
#include "ssn/png.hpp"
#include "test_configs.hpp"

using namespace ssn;
using namespace ssn::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Untrained 2x2-latent checkpoint in a per-test directory.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ssn_service_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ckpt_ = (dir_ / "model.ssnc").string();
    checkpoint::save(train::TrainState::init(ssn::testing::tiny_config()), ckpt_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Session session(std::uint64_t seed) const { return Session("t", load_model(ckpt_), seed, 2, 2); }

  fs::path dir_;
  std::string ckpt_;
};

json body(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST(PngTest, ByteMappingClampsAndRounds) {
  EXPECT_EQ(png::to_byte(-1.0), 0);
  EXPECT_EQ(png::to_byte(1.0), 255);
  EXPECT_EQ(png::to_byte(-2.0), 0);
  EXPECT_EQ(png::to_byte(3.0), 255);
  EXPECT_EQ(png::to_byte(0.0), 128);                    // 127.5, ties to even
  EXPECT_EQ(png::to_byte(-0.5), 64);                    // 63.75
  EXPECT_EQ(png::to_byte(0.25), 159);                   // 159.375
  EXPECT_EQ(png::to_byte(std::nan("")), 0);
}

TEST(PngTest, EncodeDecodeRoundTrip) {
  std::vector<Real> v(3 * 2 * 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 2.0 * static_cast<Real>(i) / 17.0;
  const auto bytes = png::encode(Tensor({1, 3, 2, 3}, v));
  EXPECT_EQ(std::string(bytes.begin() + 1, bytes.begin() + 4), "PNG");
  const auto d = png::decode(bytes);
  ASSERT_EQ(d.width, 3);
  ASSERT_EQ(d.height, 2);
  for (int p = 0; p < 6; ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(d.rgb[p * 3 + c], png::to_byte(v[c * 6 + p]));
  EXPECT_THROW(png::encode(Tensor::zeros({2, 3, 2, 2})), ContractViolation);
}

TEST_F(ServiceTest, SessionsAreDeterministicPerSeed) {
  EXPECT_EQ(session(3).png(), session(3).png());
  EXPECT_FALSE(session(3).latent() == session(4).latent());
  EXPECT_EQ(session(3).latent().block_count(), 4u);
  EXPECT_THROW(Session("x", load_model(ckpt_), 1, 4, 4), ServiceError);
  EXPECT_THROW(load_model((dir_ / "missing.ssnc").string()), ServiceError);
}

TEST_F(ServiceTest, ResampleTouchesOnlyTargets) {
  Session s = session(5);
  const auto before = s.latent();
  const auto out = s.resample({s.block_index(1, 2)}, 0);
  EXPECT_EQ(s.revision(), 1u);
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(s.latent().block(a) == before.block(a), a != 1);
    EXPECT_EQ(out.changed[a], a == 1);
  }
  EXPECT_EQ(out.png, s.png());
  EXPECT_GE(out.distortion_outside, 0.0);
  EXPECT_GT(out.block_change[1], 0.0);
}

TEST_F(ServiceTest, ResampleAllBlocksGivesFreshGrid) {
  Session s = session(6);
  const std::vector<std::uint64_t> seeds{11, 12, 13, 14};
  s.resample({0, 1, 2, 3}, 0, seeds);
  EXPECT_TRUE(s.latent() == blocks::LatentGrid::from_seeds(2, 2, 4, seeds));
}

TEST_F(ServiceTest, ResampleRejectsBadRequests) {
  Session s = session(7);
  EXPECT_THROW(s.resample({}, 0), ServiceError);
  EXPECT_THROW(s.resample({4}, 0), ServiceError);
  EXPECT_THROW(s.resample({1, 1}, 0), ServiceError);
  EXPECT_THROW(s.block_index(3, 1), ServiceError);
  EXPECT_THROW(s.block_index(0, 1), ServiceError);
  try {
    s.resample({0}, 5);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 409);
  }
  EXPECT_EQ(s.revision(), 0u);
}

TEST_F(ServiceTest, UndoRestoresExactBytes) {
  Session s = session(8);
  try {
    s.undo(0);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 409);
  }
  const auto initial = s.png();
  s.resample({0}, 0);
  const auto resampled = s.png();
  const auto seed_used = s.latent().seeds()[0];
  EXPECT_NE(resampled, initial);
  s.undo(1);
  EXPECT_EQ(s.png(), initial);
  EXPECT_EQ(s.revision(), 2u);
  // Redo by resampling with the stored block seed.
  s.resample({0}, 2, {seed_used});
  EXPECT_EQ(s.png(), resampled);
}

TEST_F(ServiceTest, StorePersistsAcrossRestart) {
  std::string id;
  std::vector<std::uint8_t> live;
  {
    SessionStore store(dir_ / "sessions");
    id = store.create(ckpt_, 9, 2, 2);
    store.with_session(id, true, [](Session& s) { s.resample({3}, 0); });
    live = store.with_session(id, false, [](const Session& s) { return s.png(); });
  }
  SessionStore restarted(dir_ / "sessions");
  EXPECT_EQ(restarted.with_session(id, false, [](const Session& s) { return s.png(); }), live);
  EXPECT_EQ(restarted.with_session(id, false, [](const Session& s) { return s.revision(); }), 1u);
  const std::string next = restarted.create(ckpt_, 9, 2, 2);
  EXPECT_NE(next, id);
  // Continuing the random stream after a restart matches an uninterrupted session.
  Session reference = session(9);
  reference.resample({3}, 0);
  reference.resample({0}, 1);
  restarted.with_session(id, true, [](Session& s) { s.resample({0}, 1); });
  EXPECT_EQ(restarted.with_session(id, false, [](const Session& s) { return s.png(); }), reference.png());
}

TEST_F(ServiceTest, ApiProtocol) {
  SessionStore store({}, ckpt_);
  const Api api(store);
  const auto created = api.handle("POST", "/sessions", R"({"seed": 3})");
  ASSERT_EQ(created.status, 201) << created.body;
  const json c = body(created);
  const std::string id = c["session_id"];
  EXPECT_EQ(c["revision"], 0);
  EXPECT_EQ(c["rows"], 2);
  EXPECT_FALSE(c["can_undo"]);
  EXPECT_FALSE(c["image_png"].get<std::string>().empty());

  const auto img = api.handle("GET", "/sessions/" + id + "/image.png", "");
  EXPECT_EQ(img.status, 200);
  EXPECT_EQ(img.content_type, "image/png");
  EXPECT_EQ(c["image_png"], base64(std::vector<std::uint8_t>(img.body.begin(), img.body.end())));

  const auto r = api.handle("POST", "/sessions/" + id + "/resample", R"({"revision": 0, "blocks": [[1,1],[1,2]]})");
  ASSERT_EQ(r.status, 200) << r.body;
  const json rj = body(r);
  EXPECT_EQ(rj["revision"], 1);
  EXPECT_EQ(rj["changed"], json::parse("[[true,true],[false,false]]"));
  EXPECT_TRUE(rj["distortion_outside"].is_number());
  EXPECT_EQ(rj["last_resampled"], json::parse("[[1,1],[1,2]]"));

  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/resample", R"({"revision": 0, "blocks": [[1,1]]})").status, 409);
  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/resample", R"({"revision": 1, "blocks": []})").status, 400);
  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/resample", R"({"revision": 1, "blocks": [[3,3]]})").status, 400);
  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/resample", R"({"blocks": [[1,1]]})").status, 400);
  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/resample", "{not json").status, 400);

  const auto u = api.handle("POST", "/sessions/" + id + "/undo", R"({"revision": 1})");
  ASSERT_EQ(u.status, 200);
  EXPECT_EQ(body(u)["revision"], 2);
  EXPECT_EQ(body(u)["image_png"], c["image_png"]);
  EXPECT_EQ(api.handle("POST", "/sessions/" + id + "/undo", R"({"revision": 2})").status, 409);

  const json st = body(api.handle("GET", "/sessions/" + id + "/state", ""));
  EXPECT_EQ(st["revision"], 2);
  EXPECT_EQ(st["session_id"], id);
  EXPECT_EQ(api.handle("GET", "/sessions/nope/state", "").status, 404);
  EXPECT_EQ(api.handle("GET", "/sessions/" + id + "/undo", "").status, 405);
  EXPECT_EQ(api.handle("POST", "/sessions", R"({"checkpoint": "/no/such.ssnc"})").status, 400);
  EXPECT_EQ(api.handle("POST", "/sessions", R"({"rows": 4, "cols": 4})").status, 400);
}

TEST_F(ServiceTest, HttpServerRoundTrip) {
  SessionStore store({}, ckpt_);
  const Api api(store);
  HttpServer server(api);
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  const auto created = client.Post("/sessions", R"({"seed": 1})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const std::string id = json::parse(created->body)["session_id"];
  const auto img = client.Get(("/sessions/" + id + "/image.png").c_str());
  ASSERT_TRUE(img);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(png::decode(std::vector<std::uint8_t>(img->body.begin(), img->body.end())).width, 8);
  server.stop();
  t.join();
}
