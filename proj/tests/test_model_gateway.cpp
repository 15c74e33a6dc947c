#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "hmgie/model_gateway.hpp"
#include "support/scripted.hpp"

using namespace hmgie;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hmgie_gw_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

class CountingBackend : public Backend {
 public:
  explicit CountingBackend(int transient_failures = 0, bool vision = true)
      : failures_(transient_failures), vision_(vision) {}
  std::string complete(const ModelRequest& req) override {
    ++calls;
    if (failures_-- > 0) throw TransientError("HTTP 503");
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    return "reply:" + req.prompt;
  }
  bool supports_vision() const override { return vision_; }
  std::string name() const override { return "counting"; }
  std::atomic<int> calls{0};
  int delay_ms = 0;

 private:
  std::atomic<int> failures_;
  bool vision_;
};

GatewayOptions no_sleep(std::vector<std::chrono::milliseconds>* slept = nullptr) {
  GatewayOptions o;
  o.sleep = [slept](std::chrono::milliseconds d) {
    if (slept) slept->push_back(d);
  };
  return o;
}

}  // namespace

TEST(CacheKey, Contract) {
  auto a = ModelRequest::text("hello", "m");
  auto b = a;
  EXPECT_EQ(cache_key(a), cache_key(b));
  b.max_output_tokens = 7;
  EXPECT_EQ(cache_key(a), cache_key(b));
  b = a;
  b.prompt = "hello ";
  EXPECT_NE(cache_key(a), cache_key(b));
  b = a;
  b.temperature = 0.30000000000000004;
  EXPECT_NE(cache_key(a), cache_key(b));
  b = a;
  b.model_id = "n";
  EXPECT_NE(cache_key(a), cache_key(b));
  const auto img = scripted::image("x");
  const auto v = ModelRequest::vision("hello", img, "m");
  EXPECT_NE(cache_key(a), cache_key(v));
  EXPECT_NE(cache_key(v), cache_key(ModelRequest::vision("hello", scripted::image("y"), "m")));
  EXPECT_EQ(cache_key(a).size(), 64u);
}

TEST(Request, Validation) {
  auto v = ModelRequest::vision("q", scripted::image("x"), "m");
  EXPECT_NO_THROW(v.validate());
  auto tampered = std::make_shared<ImageInput>(*v.image);
  tampered->bytes += "!";
  v.image = tampered;
  EXPECT_THROW(v.validate(), Error);
  auto t = ModelRequest::text("q", "m");
  t.temperature = -1;
  EXPECT_THROW(t.validate(), Error);
  t = ModelRequest::text("q", "m");
  t.kind = RequestKind::Vision;
  EXPECT_THROW(t.validate(), Error);
}

TEST(Gateway, CachesIdenticalRequests) {
  auto backend = std::make_shared<CountingBackend>();
  Gateway gw(backend, no_sleep());
  const auto req = ModelRequest::text("p", "m");
  const auto r1 = gw.call(req);
  const auto r2 = gw.call(req);
  EXPECT_FALSE(r1.cached);
  EXPECT_TRUE(r2.cached);
  EXPECT_EQ(r1.text, r2.text);
  EXPECT_EQ(backend->calls, 1);
  const auto r3 = gw.call(req, {true});
  EXPECT_FALSE(r3.cached);
  EXPECT_EQ(backend->calls, 2);
}

TEST(Gateway, RetriesTransientFailures) {
  auto backend = std::make_shared<CountingBackend>(2);
  std::vector<std::chrono::milliseconds> slept;
  Gateway gw(backend, no_sleep(&slept));
  EXPECT_EQ(gw.call(ModelRequest::text("p", "m")).text, "reply:p");
  EXPECT_EQ(backend->calls, 3);
  ASSERT_EQ(slept.size(), 2u);
  EXPECT_EQ(slept[0].count(), 1000);
  EXPECT_EQ(slept[1].count(), 2000);
}

TEST(Gateway, ExhaustedAfterAttempts) {
  auto backend = std::make_shared<CountingBackend>(100);
  Gateway gw(backend, no_sleep());
  try {
    gw.call(ModelRequest::text("p", "m"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Exhausted);
  }
  EXPECT_EQ(backend->calls, 3);
}

TEST(Gateway, BackoffNeverExceedsCeiling) {
  for (int attempts = 1; attempts <= 8; ++attempts) {
    for (int ceiling : {0, 500, 2500, 10000}) {
      std::vector<std::chrono::milliseconds> slept;
      GatewayOptions o = no_sleep(&slept);
      o.retry = {attempts, std::chrono::milliseconds(700), 3.0, std::chrono::milliseconds(ceiling)};
      Gateway gw(std::make_shared<CountingBackend>(100), o);
      EXPECT_THROW(gw.call(ModelRequest::text("p", "m")), Error);
      long long total = 0;
      for (auto d : slept) total += d.count();
      EXPECT_LE(total, ceiling);
      EXPECT_EQ(gw.total_backoff().count(), total);
    }
  }
}

TEST(Gateway, AuthErrorsAreNotRetried) {
  auto backend = std::make_shared<ScriptedBackend>(
      [](const ModelRequest&) -> std::string { throw Error(ErrorCode::AuthError, "401"); });
  Gateway gw(backend, no_sleep());
  try {
    gw.call(ModelRequest::text("p", "m"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AuthError);
  }
  EXPECT_EQ(backend->trace().size(), 1u);
}

TEST(Gateway, VisionToTextOnlyBackend) {
  Gateway gw(std::make_shared<CountingBackend>(0, false), no_sleep());
  try {
    gw.call(ModelRequest::vision("q", scripted::image("x"), "m"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unsupported);
  }
}

TEST(Gateway, ConcurrentIdenticalRequestsCoalesce) {
  auto backend = std::make_shared<CountingBackend>();
  backend->delay_ms = 50;
  Gateway gw(backend, no_sleep());
  std::vector<std::string> out(8);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&, i] { out[i] = gw.call(ModelRequest::text("same", "m")).text; });
    }
  }
  EXPECT_EQ(backend->calls, 1);
  for (const auto& s : out) EXPECT_EQ(s, "reply:same");
}

TEST(FixtureStoreAndReplay, RecordThenReplay) {
  const auto dir = temp_dir("record");
  auto store = std::make_shared<FixtureStore>(dir);
  GatewayOptions rec = no_sleep();
  rec.store = store;
  auto live = std::make_shared<CountingBackend>();
  Gateway recorder(live, rec);
  const auto req = ModelRequest::text("question", "m");
  const std::string recorded = recorder.call(req).text;
  EXPECT_TRUE(fs::exists(dir / cache_key(req)));

  Gateway replay(std::make_shared<ReplayBackend>(store), no_sleep());
  EXPECT_EQ(replay.call(req).text, recorded);

  // A second recorder reads the store instead of calling out.
  auto live2 = std::make_shared<CountingBackend>();
  Gateway again(live2, rec);
  const auto hit = again.call(req);
  EXPECT_TRUE(hit.cached);
  EXPECT_EQ(live2->calls, 0);

  const auto missing = ModelRequest::text("other", "m");
  try {
    replay.call(missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Exhausted);
    EXPECT_NE(std::string(e.what()).find(cache_key(missing)), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Images, SniffAndLoad) {
  EXPECT_EQ(sniff_media_type(std::string("\x89PNG\r\n\x1a\n....", 12)), "image/png");
  EXPECT_EQ(sniff_media_type("\xff\xd8\xff\xe0"), "image/jpeg");
  EXPECT_EQ(sniff_media_type("GIF89a.."), "image/gif");
  EXPECT_EQ(sniff_media_type(std::string("RIFF\x10\x00\x00\x00WEBPVP8 ", 16)), "image/webp");
  EXPECT_FALSE(sniff_media_type("hello").has_value());
  const auto dir = temp_dir("img");
  {
    std::ofstream(dir / "bad.png") << "not an image";
  }
  try {
    load_image(dir / "bad.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidImage);
  }
  try {
    load_image(dir / "missing.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  fs::remove_all(dir);
}
