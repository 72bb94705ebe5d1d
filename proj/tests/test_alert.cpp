#include <doctest.h>

#include <atomic>
#include <random>
#include <sstream>

#include <httplib.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "incubator/alert.hpp"
#include "incubator/error.hpp"

using namespace incubator;
using namespace incubator::alert;

namespace {

AlertRule skin_rule() {
  AlertRule r;
  r.field = 5;
  r.lower = 36.5;
  r.upper = 37.2;
  r.severity = Severity::critical;
  r.label = "skin_temp";
  return r;
}

// Feeds values through evaluate and returns (index, transition) pairs.
std::vector<std::pair<std::size_t, AlertState>> run_rule(const AlertRule& rule, const std::vector<double>& values) {
  std::vector<std::pair<std::size_t, AlertState>> out;
  RuleState st;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto ev = evaluate(st, rule, values[i]);
    st = ev.state;
    if (ev.transition) out.emplace_back(i, *ev.transition);
  }
  return out;
}

// Reference evaluator: looks back over windows instead of keeping counters.
std::vector<std::pair<std::size_t, AlertState>> reference(const AlertRule& rule, const std::vector<double>& values) {
  std::vector<std::pair<std::size_t, AlertState>> out;
  bool open = false;
  std::size_t since = 0;  // first index after the previous transition
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t need = static_cast<std::size_t>(open ? rule.clear_n : rule.debounce_n);
    if (i + 1 < since + need) continue;
    bool all = true;
    for (std::size_t j = i + 1 - need; j <= i; ++j) {
      const bool breach = !rule.in_band(values[j]);
      if (breach == open) all = false;
    }
    if (!all) continue;
    out.emplace_back(i, open ? AlertState::resolved : AlertState::active);
    open = !open;
    since = i + 1;
  }
  return out;
}

wire::FeedEntry entry_with(std::int64_t id, std::optional<std::string> f6, std::int64_t ts = 0) {
  wire::FeedEntry e;
  e.entry_id = id;
  e.created_at = Timestamp{1704067200 + (ts ? ts : id)};
  e.fields[5] = std::move(f6);
  return e;
}

}  // namespace

TEST_CASE("evaluate: three consecutive breaches raise") {
  const auto t = run_rule(skin_rule(), {37.5, 37.6, 37.4});
  REQUIRE(t.size() == 1);
  CHECK(t[0].first == 2);
  CHECK(t[0].second == AlertState::active);
}

TEST_CASE("evaluate: broken streak raises nothing") {
  CHECK(run_rule(skin_rule(), {37.5, 36.8, 37.5}).empty());
}

TEST_CASE("evaluate: five in-band samples resolve") {
  const auto t = run_rule(skin_rule(), {37.5, 37.6, 37.4, 36.9, 36.9, 36.9, 36.9, 36.9});
  REQUIRE(t.size() == 2);
  CHECK(t[1].first == 7);
  CHECK(t[1].second == AlertState::resolved);
  // An interrupted clear streak starts over.
  const auto t2 = run_rule(skin_rule(), {38, 38, 38, 37, 37, 37, 37, 38, 37, 37, 37, 37, 37});
  REQUIRE(t2.size() == 2);
  CHECK(t2[1].first == 12);
}

TEST_CASE("bounds are inclusive") {
  CHECK(skin_rule().in_band(36.5));
  CHECK(skin_rule().in_band(37.2));
  CHECK_FALSE(skin_rule().in_band(37.21));
  AlertRule gas;
  gas.upper = 300;
  CHECK(gas.in_band(300));
  CHECK_FALSE(gas.in_band(301));
  CHECK(gas.in_band(-1e9));
}

TEST_CASE("evaluate matches the reference evaluator on random sequences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    AlertRule rule = skin_rule();
    rule.debounce_n = 1 + static_cast<int>(rng() % 5);
    rule.clear_n = 1 + static_cast<int>(rng() % 6);
    const double p_breach = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    std::bernoulli_distribution breach(p_breach);
    std::vector<double> values(1 + rng() % 80);
    for (auto& v : values) v = breach(rng) ? 37.5 : 36.9;
    const auto got = run_rule(rule, values);
    const auto want = reference(rule, values);
    REQUIRE(got == want);
    // Transitions alternate, starting with ACTIVE: never two open alerts.
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i].second == (i % 2 == 0 ? AlertState::active : AlertState::resolved));
  }
}

TEST_CASE("rule validation") {
  AlertRule r;
  CHECK_THROWS_AS(validate(r), ConfigError);  // no bounds
  r.lower = 5;
  r.upper = 5;
  CHECK_THROWS_AS(validate(r), ConfigError);
  r.upper = 6;
  CHECK_NOTHROW(validate(r));
  r.debounce_n = 0;
  CHECK_THROWS_AS(validate(r), ConfigError);
  r.debounce_n = 1;
  r.clear_n = 0;
  CHECK_THROWS_AS(validate(r), ConfigError);

  const auto parsed = parse_rule(nlohmann::json::parse(R"({"field":"field4","upper":300,"severity":"critical"})"));
  CHECK(parsed.field == 3);
  CHECK(parsed.label == "field4");
  CHECK(parsed.debounce_n == 3);
  CHECK(parsed.clear_n == 5);
  CHECK(parse_rule(rule_to_json(parsed)).upper == 300);
  CHECK_THROWS_AS(parse_rule(nlohmann::json::parse(R"({"field":"field9","upper":1})")), ConfigError);
  CHECK_THROWS_AS(parse_rule(nlohmann::json::parse(R"({"field":"field1","upper":1,"severity":"meh"})")), ConfigError);
}

TEST_CASE("default rules") {
  const auto rules = default_rules();
  REQUIRE(rules.size() == 6);
  CHECK(rules[0].field == 5);
  CHECK(*rules[0].lower == 36.5);
  CHECK(*rules[0].upper == 37.2);
  CHECK(rules[0].severity == Severity::critical);
  for (const auto& r : rules) CHECK_NOTHROW(validate(r));
}

TEST_CASE("legal transitions") {
  using S = AlertState;
  CHECK(is_legal_transition(S::pending, S::active));
  CHECK(is_legal_transition(S::active, S::acknowledged));
  CHECK(is_legal_transition(S::active, S::resolved));
  CHECK(is_legal_transition(S::acknowledged, S::resolved));
  CHECK_FALSE(is_legal_transition(S::resolved, S::active));
  CHECK_FALSE(is_legal_transition(S::acknowledged, S::active));
  CHECK_FALSE(is_legal_transition(S::resolved, S::acknowledged));
  CHECK_FALSE(is_legal_transition(S::pending, S::resolved));
}

TEST_CASE("alert book lifecycle and acknowledgement") {
  AlertBook book(7, {skin_rule()});
  std::vector<Transition> all;
  for (int i = 1; i <= 3; ++i) {
    auto t = book.on_entry(entry_with(i, "37.5"));
    all.insert(all.end(), t.begin(), t.end());
  }
  REQUIRE(all.size() == 1);
  CHECK(all[0].state == AlertState::active);
  CHECK(all[0].alert.alert_id == 1);
  CHECK(all[0].alert.raised_at == Timestamp{1704067203});
  CHECK(all[0].alert.trigger_value == 37.5);

  const auto payload = transition_payload(all[0]);
  CHECK(payload.dump() ==
        R"({"alert_id":1,"channel_id":7,"label":"skin_temp","state":"ACTIVE","field":"field6","value":37.5,"ts":"2024-01-01T00:00:03Z","severity":"critical"})");

  CHECK_THROWS_AS(book.acknowledge(99, "nurse", Timestamp{1704067210}), NotFoundError);
  const auto ack = book.acknowledge(1, "nurse", Timestamp{1704067210});
  CHECK(ack.state == AlertState::acknowledged);
  CHECK(ack.alert.acked_by == "nurse");
  CHECK_THROWS_AS(book.acknowledge(1, "nurse", Timestamp{1704067211}), ConflictError);
  REQUIRE(book.open_alerts().size() == 1);

  // Still breaching: no duplicate alert.
  for (int i = 4; i <= 10; ++i) CHECK(book.on_entry(entry_with(i, "37.9")).empty());
  CHECK(book.all_alerts().size() == 1);

  std::vector<Transition> res;
  for (int i = 11; i <= 15; ++i) {
    auto t = book.on_entry(entry_with(i, "36.9"));
    res.insert(res.end(), t.begin(), t.end());
  }
  REQUIRE(res.size() == 1);
  CHECK(res[0].state == AlertState::resolved);
  const auto& a = book.all_alerts()[0];
  CHECK(a.raised_at <= *a.acked_at);
  CHECK(*a.acked_at <= *a.resolved_at);
  CHECK(book.open_alerts().empty());
  CHECK_THROWS_AS(book.acknowledge(1, "nurse", Timestamp{1704067300}), ConflictError);

  // A new breach opens a second alert with the next id.
  for (int i = 16; i <= 18; ++i) book.on_entry(entry_with(i, "35.0"));
  REQUIRE(book.all_alerts().size() == 2);
  CHECK(book.all_alerts()[1].alert_id == 2);
}

TEST_CASE("ack timestamp never precedes the raise") {
  AlertBook book(1, {skin_rule()});
  for (int i = 1; i <= 3; ++i) book.on_entry(entry_with(i, "38", 100 + i));
  const auto ack = book.acknowledge(1, "n", Timestamp{1704067200});  // clock behind the data
  CHECK(*ack.alert.acked_at >= ack.alert.raised_at);
}

TEST_CASE("missing or non-numeric fields leave counters untouched") {
  AlertBook book(1, {skin_rule()});
  book.on_entry(entry_with(1, "37.5"));
  book.on_entry(entry_with(2, "37.5"));
  const auto before = book.rule_states()[0];
  CHECK(book.on_entry(entry_with(3, std::nullopt)).empty());
  CHECK(book.on_entry(entry_with(4, "abc")).empty());
  CHECK(book.rule_states()[0].breach_count == before.breach_count);
  CHECK(book.rule_states()[0].clear_count == before.clear_count);
  CHECK(book.on_entry(entry_with(5, "37.5")).size() == 1);
}

TEST_CASE("log sink writes one line per transition") {
  std::ostringstream os;
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(os);
  auto logger = std::make_shared<spdlog::logger>("alert-test", sink);
  logger->set_level(spdlog::level::info);
  logger->set_pattern("%v");
  LogSink log(logger);
  AlertBook book(2, {skin_rule()});
  Transition t;
  for (int i = 1; i <= 3; ++i)
    for (auto& x : book.on_entry(entry_with(i, "38"))) t = x;
  const auto r = log.deliver(t);
  CHECK(r.delivered);
  CHECK(r.attempts == 1);
  CHECK(os.str() == "alert " + transition_payload(t).dump() + "\n");
}

namespace {

Transition sample_transition() {
  AlertBook book(2, {skin_rule()});
  Transition t;
  for (int i = 1; i <= 3; ++i)
    for (auto& x : book.on_entry(entry_with(i, "38"))) t = x;
  return t;
}

}  // namespace

TEST_CASE("webhook: healthy endpoint gets exactly one POST") {
  httplib::Server srv;
  std::atomic<int> posts{0};
  std::string last_body, last_type;
  std::mutex m;
  srv.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(m);
    ++posts;
    last_body = req.body;
    last_type = req.get_header_value("Content-Type");
    res.status = 204;
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  const auto t = sample_transition();
  WebhookSink hook(fmt::format("http://127.0.0.1:{}/hook", port));
  const auto r = hook.deliver(t);
  srv.stop();
  th.join();
  CHECK(r.delivered);
  CHECK(r.attempts == 1);
  CHECK(posts == 1);
  CHECK(last_body == transition_payload(t).dump());
  CHECK(last_type == "application/json");
}

TEST_CASE("webhook: unreachable endpoint gets four attempts with 1/2/4 s waits") {
  std::vector<std::chrono::milliseconds> waits;
  int calls = 0;
  WebhookSink hook([&](const std::string&) { return ++calls, false; }, RetryPolicy{},
                   [&](std::chrono::milliseconds d) { waits.push_back(d); });
  const auto r = hook.deliver(sample_transition());
  CHECK_FALSE(r.delivered);
  CHECK(r.attempts == 4);
  CHECK(calls == 4);
  using namespace std::chrono_literals;
  CHECK(waits == std::vector<std::chrono::milliseconds>{1s, 2s, 4s});
}

TEST_CASE("webhook: recovers on a later attempt and survives throwing posters") {
  int calls = 0;
  WebhookSink hook(
      [&](const std::string&) {
        if (++calls == 1) throw std::runtime_error("boom");
        return calls == 3;
      },
      RetryPolicy{}, [](std::chrono::milliseconds) {});
  const auto r = hook.deliver(sample_transition());
  CHECK(r.delivered);
  CHECK(r.attempts == 3);
}

TEST_CASE("webhook over real HTTP to a closed port is dropped") {
  // Bind then close to obtain a port with no listener.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  RetryPolicy fast;
  fast.backoff = {std::chrono::milliseconds(1), std::chrono::milliseconds(1), std::chrono::milliseconds(1)};
  fast.timeout = std::chrono::milliseconds(200);
  WebhookSink hook(fmt::format("http://127.0.0.1:{}/x", port), fast);
  const auto r = hook.deliver(sample_transition());
  CHECK_FALSE(r.delivered);
  CHECK(r.attempts == 4);
}

namespace {

class SlowSink final : public Sink {
 public:
  explicit SlowSink(std::chrono::milliseconds d) : d_(d) {}
  std::string name() const override { return "slow"; }
  DeliveryResult deliver(const Transition&) override {
    std::this_thread::sleep_for(d_);
    return {name(), true, 1};
  }

 private:
  std::chrono::milliseconds d_;
};

class ThrowingSink final : public Sink {
 public:
  std::string name() const override { return "bad"; }
  DeliveryResult deliver(const Transition&) override { throw std::runtime_error("sink failure"); }
};

}  // namespace

TEST_CASE("notifier never blocks the caller") {
  std::vector<std::unique_ptr<Sink>> sinks;
  sinks.push_back(std::make_unique<ThrowingSink>());
  sinks.push_back(std::make_unique<SlowSink>(std::chrono::milliseconds(300)));
  Notifier n(std::move(sinks));
  const auto t0 = std::chrono::steady_clock::now();
  n.post(sample_transition());
  n.post(sample_transition());
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(100));
  n.drain();
  const auto results = n.results();
  REQUIRE(results.size() == 4);
  CHECK_FALSE(results[0].delivered);
  CHECK(results[1].delivered);
}
