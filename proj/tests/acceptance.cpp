// Acceptance suite: one PASS/FAIL line per primary criterion; exit status 1 if any fail.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "incubator/agent.hpp"
#include "incubator/ingest.hpp"
#include "incubator/store.hpp"
#include "test_support.hpp"

using namespace incubator;
using test_support::ChildProcess;
using test_support::run_program;
using test_support::TempDir;

namespace {

const std::string kCli = INCUBATOR_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

ingest::ServerConfig server_config(const TempDir& dir, const nlohmann::json& channels) {
  nlohmann::json doc{{"host", "127.0.0.1"}, {"port", 0}, {"channels", channels}};
  doc["data_dir"] = (dir / "data").string();
  doc["alert_log"] = (dir / "alerts.log").string();
  return ingest::parse_server_config(doc);
}

nlohmann::json default_channel() {
  return nlohmann::json::parse(R"([{"channel_id":1,"write_key":"WK","read_key":"RK","min_update_interval_s":1}])");
}

agent::AgentConfig base_agent(double duration_s) {
  agent::AgentConfig cfg;
  cfg.channel_id = 1;
  cfg.write_key = "WK";
  cfg.duration_s = duration_s;
  cfg.dt_s = 1.0;
  return cfg;
}

// Debounce reference: a raise at i needs the last debounce_n samples (all after
// the previous transition) out of band; a resolve needs clear_n in band.
std::vector<std::pair<std::size_t, bool>> reference_transitions(const std::vector<double>& v, double upper,
                                                                int debounce_n, int clear_n) {
  std::vector<std::pair<std::size_t, bool>> out;
  bool open = false;
  std::size_t since = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto need = static_cast<std::size_t>(open ? clear_n : debounce_n);
    if (i + 1 < since + need) continue;
    bool all = true;
    for (std::size_t j = i + 1 - need; j <= i; ++j) all = all && ((v[j] > upper) != open);
    if (!all) continue;
    out.emplace_back(i, !open);
    open = !open;
    since = i + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1 and 2 share one default run.

struct DefaultRun {
  std::vector<agent::TickRecord> ticks;
  std::vector<alert::Alert> alerts;
  double seconds = 0.0;
};

const DefaultRun& default_run() {
  static const DefaultRun run = [] {
    DefaultRun r;
    TempDir dir;
    ingest::Service svc(server_config(dir, default_channel()));
    agent::InProcessTransport transport(svc, 1, "WK");
    auto cfg = base_agent(3600);
    const auto t0 = std::chrono::steady_clock::now();
    agent::run_agent(cfg, transport, [&](const agent::TickRecord& rec) { r.ticks.push_back(rec); });
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.alerts = svc.alerts(1);
    return r;
  }();
  return run;
}

Outcome setpoint_regulation() {
  const auto& run = default_run();
  const agent::AgentConfig cfg = base_agent(3600);
  const plant::PlantParams p;
  const double q = cfg.sensors.temp_quantum_c;
  const double lo = 34.7 - q, hi = 35.3 + q;
  // Steady heat balance at 35 C with the infant at equilibrium: duty*P = k_loss*(35 - Tamb) - q_m.
  const double duty_target =
      (p.loss_conductance * (cfg.controller.setpoint_c - p.ambient_temp_c) - p.metabolic_heat_w) / p.heater_power_w;

  double amin = INFINITY, amax = -INFINITY, duty_sum = 0.0;
  int n = 0;
  for (const auto& t : run.ticks) {
    if (t.tick <= 3000) continue;
    amin = std::min(amin, t.state.air_temp_c);
    amax = std::max(amax, t.state.air_temp_c);
    duty_sum += t.heater_duty;
    ++n;
  }
  const double duty = duty_sum / n;
  const bool ok = run.ticks.size() == 3600 && n == 600 && amin >= lo && amax <= hi &&
                  std::abs(duty - duty_target) <= 0.02 && run.seconds < 5.0;
  return {ok, fmt::format("final 600 s air [{:.3f}, {:.3f}] within [{:.1f}, {:.1f}]; mean duty {:.4f} vs {:.4f}"
                          " +/- 0.02; runtime {:.2f} s (< 5)",
                          amin, amax, lo, hi, duty, duty_target, run.seconds)};
}

Outcome vital_band() {
  const auto& run = default_run();
  double smin = INFINITY, smax = -INFINITY, rmin = INFINITY, rmax = -INFINITY;
  for (const auto& t : run.ticks) {
    if (t.tick < 1800) continue;
    smin = std::min(smin, t.state.skin_temp_c);
    smax = std::max(smax, t.state.skin_temp_c);
    rmin = std::min(rmin, t.frame.skin_temp_c);
    rmax = std::max(rmax, t.frame.skin_temp_c);
  }
  const Timestamp cutoff{base_agent(0).start_time.seconds + 1800};
  int late_alerts = 0;
  for (const auto& a : run.alerts) {
    if (a.field == 5 && a.raised_at >= cutoff) ++late_alerts;
  }
  const bool ok = smin >= 36.5 && smax <= 37.2 && rmin >= 36.5 && rmax <= 37.2 && late_alerts == 0;
  return {ok, fmt::format("t >= 1800 s skin state [{:.3f}, {:.3f}], readings [{:.1f}, {:.1f}] within [36.5, 37.2];"
                          " skin alerts raised after 1800 s: {}",
                          smin, smax, rmin, rmax, late_alerts)};
}

// ---------------------------------------------------------------------------

Outcome servo_comparison() {
  auto peak_to_peak = [](control::Servo servo, double setpoint) {
    TempDir dir;
    ingest::Service svc(server_config(dir, default_channel()));
    agent::InProcessTransport transport(svc, 1, "WK");
    auto cfg = base_agent(3600);
    cfg.sensors = cfg.sensors.noiseless();
    cfg.controller.servo = servo;
    cfg.controller.setpoint_c = setpoint;
    double lo = INFINITY, hi = -INFINITY;
    agent::run_agent(cfg, transport, [&](const agent::TickRecord& r) {
      if (r.tick < 1800) return;  // compare settled behaviour only
      lo = std::min(lo, r.state.air_temp_c);
      hi = std::max(hi, r.state.air_temp_c);
    });
    return hi - lo;
  };
  const double air = peak_to_peak(control::Servo::air, 35.0);
  const double skin = peak_to_peak(control::Servo::skin, 37.0);
  const double ratio = skin / air;
  return {ratio >= 1.5, fmt::format("air p-p over 1800-3600 s: skin-servo {:.3f} C, air-servo {:.3f} C, ratio {:.2f}"
                                    " (>= 1.5)",
                                    skin, air, ratio)};
}

// ---------------------------------------------------------------------------

Outcome alert_latency() {
  httplib::Server hook;
  std::mutex m;
  std::vector<nlohmann::json> posts;
  hook.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(m);
    posts.push_back(nlohmann::json::parse(req.body));
    res.status = 200;
  });
  const int hook_port = hook.bind_to_any_port("127.0.0.1");
  std::thread hook_thread([&] { hook.listen_after_bind(); });
  hook.wait_until_ready();

  TempDir dir;
  auto channels = nlohmann::json::parse(R"([{"channel_id":1,"write_key":"WK","read_key":"RK",
      "alert_rules":[{"field":"field4","upper":300,"debounce_n":3,"severity":"critical","label":"gas"}]}])");
  auto cfg_server = server_config(dir, channels);
  cfg_server.webhook_url = fmt::format("http://127.0.0.1:{}/hook", hook_port);

  std::vector<double> gas;
  std::vector<Timestamp> stamps;
  std::vector<alert::Alert> alerts;
  {
    ingest::Service svc(cfg_server);
    agent::InProcessTransport transport(svc, 1, "WK");
    auto cfg = base_agent(900);  // leak stays on, so no RESOLVED follows
    cfg.scenario = plant::parse_scenario(nlohmann::json::parse(R"([{"at_s":600,"kind":"gas_leak","magnitude":600}])"));
    agent::run_agent(cfg, transport);
    svc.drain_notifications();
    for (const auto& e : svc.entries(1)) {
      gas.push_back(*wire::parse_number(*e.fields[3]));
      stamps.push_back(e.created_at);
    }
    alerts = svc.alerts(1);
  }
  hook.stop();
  hook_thread.join();

  const auto want = reference_transitions(gas, 300, 3, 5);
  bool ok = want.size() == 1 && want[0].second && alerts.size() == 1;
  std::string where = "none";
  if (ok) {
    const std::size_t i = want[0].first;
    ok = alerts[0].raised_at == stamps[i] && alerts[0].trigger_value == gas[i] && gas[i - 2] > 300 &&
         gas[i - 1] > 300 && gas[i] > 300 && alerts[0].state == alert::AlertState::active;
    where = fmt::format("sample {} (t={} s, gas {}, {}, {})", i + 1, i + 1, gas[i - 2], gas[i - 1], gas[i]);
  }
  ok = ok && posts.size() == 1 && posts[0]["state"] == "ACTIVE" && posts[0]["field"] == "field4";
  return {ok, fmt::format("ACTIVE at reference sample: {}; alerts {}; webhook POSTs {} (== 1)", where, alerts.size(),
                          posts.size())};
}

// ---------------------------------------------------------------------------

Outcome round_trip() {
  std::mt19937_64 rng(2024);
  auto random_value = [&]() -> std::optional<std::string> {
    switch (rng() % 7) {
      case 0: return std::nullopt;
      case 1: return fmt::format("{:.1f}", std::uniform_real_distribution<double>(-50, 50)(rng));
      case 2: return fmt::format("{:.2f}", std::uniform_real_distribution<double>(0, 1)(rng));  // e.g. 35.00
      case 3: return std::to_string(static_cast<int>(rng() % 1024));
      case 4: return fmt::format("{}e{}", rng() % 10, static_cast<int>(rng() % 7) - 3);
      case 5: return fmt::format("+{}", rng() % 100);
      default: {
        static const std::string alphabet = "abc XYZ&=%+/?#,.;:-_~!*'()";
        std::string s;
        for (std::size_t k = 0, n = 1 + rng() % 12; k < n; ++k) s += alphabet[rng() % alphabet.size()];
        return s;
      }
    }
  };

  TempDir dir;
  ingest::Service svc(server_config(dir, default_channel()));
  ingest::HttpServer http(svc);
  const int port = http.bind("127.0.0.1", 0);
  http.start();
  httplib::Client cli("127.0.0.1", port);
  cli.set_keep_alive(true);
  cli.set_tcp_nodelay(true);

  std::vector<wire::FieldValues> sent;
  int status_errors = 0;
  for (int i = 0; i < 1000; ++i) {
    wire::FieldValues f;
    for (auto& v : f) v = random_value();
    if (std::none_of(f.begin(), f.end(), [](const auto& v) { return v.has_value(); })) f[0] = "0";
    wire::FeedEntry e{0, Timestamp{1704067200 + i}, f};
    const auto req = wire::encode_entry_update(e, "WK");
    const auto res = cli.Post(req.path, req.body, "application/x-www-form-urlencoded");
    if (!res || res->status != 200 || res->body != std::to_string(i + 1)) ++status_errors;
    sent.push_back(f);
  }
  const auto res = cli.Get("/channels/1/feeds.json?api_key=RK&results=8000");
  http.stop();

  int mismatches = 0, id_errors = 0;
  std::size_t returned = 0;
  if (res && res->status == 200) {
    const auto feeds = nlohmann::json::parse(res->body).at("feeds");
    returned = feeds.size();
    for (std::size_t i = 0; i < feeds.size() && i < sent.size(); ++i) {
      const auto entry = wire::feed_entry_from_json(feeds[i]);
      if (entry.entry_id != static_cast<std::int64_t>(i + 1)) ++id_errors;
      if (entry.fields != sent[i]) ++mismatches;
    }
  }

  // Device frames through the form codec.
  int codec_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    SensorFrame f;
    f.created_at = Timestamp{1704067200 + static_cast<std::int64_t>(rng() % 100000000)};
    f.air_temp_c = std::round(std::uniform_real_distribution<double>(-10, 60)(rng) * 10) / 10;
    f.rh_pct = std::round(std::uniform_real_distribution<double>(0, 100)(rng) * 10) / 10;
    f.pulse_bpm = static_cast<int>(rng() % 250);
    f.gas_adc = static_cast<int>(rng() % 1024);
    f.light_lux = static_cast<int>(rng() % 5000);
    f.skin_temp_c = std::round(std::uniform_real_distribution<double>(30, 42)(rng) * 10) / 10;
    f.heater_duty = (rng() % 2) ? 1.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    const auto parsed = wire::parse_update(wire::encode_update(f, "WK").body);
    if (parsed.api_key != "WK" || parsed.fields != wire::frame_fields(f) || parsed.created_at != f.created_at ||
        *parsed.numeric(0) != f.air_temp_c || *parsed.numeric(5) != f.skin_temp_c ||
        *parsed.numeric(2) != f.pulse_bpm) {
      ++codec_failures;
    }
  }

  const bool ok = status_errors == 0 && returned == 1000 && mismatches == 0 && id_errors == 0 && codec_failures == 0;
  return {ok, fmt::format("1000 updates over HTTP: {} returned, {} field mismatches, {} id gaps, {} bad responses;"
                          " 1000 frames through encode/parse: {} failures",
                          returned, mismatches, id_errors, status_errors, codec_failures)};
}

// ---------------------------------------------------------------------------

Outcome rate_limiting() {
  auto run = [](bool supply_created_at, std::vector<int>& statuses, std::size_t& persisted, bool& persisted_match) {
    TempDir dir;
    double now = 1704067200.0;
    ingest::ServiceOptions opts;
    opts.clock = [&now] { return now; };
    ingest::Service svc(server_config(dir, default_channel()), std::move(opts));
    std::vector<std::string> accepted_values;
    for (int i = 0; i < 200; ++i) {  // 100 s at 2 Hz
      const std::string value = std::to_string(i);
      std::string body = "api_key=WK&field1=" + value;
      if (supply_created_at) body += "&created_at=" + format_iso8601(Timestamp{static_cast<std::int64_t>(now)});
      const auto r = svc.handle_update(body);
      statuses.push_back(r.status);
      if (r.status == 200) accepted_values.push_back(value);
      now += 0.5;
    }
    const auto entries = svc.entries(1);
    persisted = test_support::count_lines(test_support::slurp(store::channel_log_path(dir / "data", 1)));
    persisted_match = entries.size() == accepted_values.size();
    for (std::size_t i = 0; persisted_match && i < entries.size(); ++i) {
      persisted_match = entries[i].fields[0] == accepted_values[i];
    }
  };

  std::string detail;
  bool ok = true;
  for (bool supplied : {false, true}) {
    std::vector<int> statuses;
    std::size_t persisted = 0;
    bool match = false;
    run(supplied, statuses, persisted, match);
    bool alternating = true;
    for (std::size_t i = 0; i < statuses.size(); ++i) alternating = alternating && statuses[i] == (i % 2 ? 429 : 200);
    ok = ok && alternating && persisted == statuses.size() / 2 && match;
    detail += fmt::format("{}{}: {} posts, alternating {}, persisted {} / {}", detail.empty() ? "" : "; ",
                          supplied ? "device created_at" : "server clock", statuses.size(),
                          alternating ? "yes" : "no", persisted, match ? "matching accepted" : "MISMATCH");
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  std::vector<std::string> logs1, logs2, reports;
  std::string problem;
  for (int run = 0; run < 2; ++run) {
    TempDir dir;
    nlohmann::json cfg = nlohmann::json::parse(R"({
      "server": {"channels": [
        {"channel_id": 1, "write_key": "W1", "read_key": "R1"},
        {"channel_id": 2, "write_key": "W2", "read_key": "R2"}]},
      "agents": [
        {"channel_id": 1, "seed": 11, "duration_s": 3600,
         "scenario": [{"at_s": 900, "kind": "gas_leak", "magnitude": 600, "duration_s": 120},
                      {"at_s": 2000, "kind": "door_open", "magnitude": 20, "duration_s": 60}]},
        {"channel_id": 2, "seed": 12, "duration_s": 3600,
         "controller": {"mode": "pid", "servo": "skin", "setpoint_c": 37.0},
         "scenario": [{"at_s": 1200, "kind": "bradycardia", "magnitude": 80, "duration_s": 90}]}]})");
    cfg["server"]["data_dir"] = (dir / "data").string();
    cfg["server"]["alert_log"] = (dir / "alerts.log").string();
    test_support::spit(dir / "fleet.json", cfg.dump());
    const auto r = run_program({kCli, "all-in-one", "--config", (dir / "fleet.json").string()});
    if (r.exit_code != 0) problem = fmt::format("all-in-one exit {}", r.exit_code);
    logs1.push_back(test_support::slurp(store::channel_log_path(dir / "data", 1)));
    logs2.push_back(test_support::slurp(store::channel_log_path(dir / "data", 2)));
    std::string rep;
    for (const char* ch : {"1", "2"}) {
      const auto out = run_program(
          {kCli, "report", "--data-dir", (dir / "data").string(), "--channel", ch, "--window", "3600"});
      if (out.exit_code != 0) problem = fmt::format("report exit {}", out.exit_code);
      rep += out.out;
    }
    reports.push_back(rep);
  }
  const bool logs_equal = logs1[0] == logs1[1] && logs2[0] == logs2[1];
  const bool complete = test_support::count_lines(logs1[0]) == 3600 && test_support::count_lines(logs2[0]) == 3600;
  const bool reports_equal = reports[0] == reports[1] && !reports[0].empty();
  const bool ok = problem.empty() && logs_equal && complete && reports_equal;
  return {ok, fmt::format("two all-in-one runs, 2 agents x 3600 ticks: logs {} ({} + {} bytes), reports {}{}",
                          logs_equal ? "byte-identical" : "DIFFER", logs1[0].size(), logs2[0].size(),
                          reports_equal ? "byte-identical" : "DIFFER", problem.empty() ? "" : "; " + problem)};
}

// ---------------------------------------------------------------------------

Outcome crash_recovery() {
  constexpr int kTicks = 300, kKillAfter = 150;
  const auto channels = default_channel();

  // Uninterrupted reference.
  TempDir ref;
  {
    ingest::Service svc(server_config(ref, channels));
    agent::InProcessTransport transport(svc, 1, "WK");
    agent::run_agent(base_agent(kTicks), transport);
  }
  const std::string reference = test_support::slurp(store::channel_log_path(ref / "data", 1));

  TempDir dir;
  nlohmann::json server_doc{{"host", "127.0.0.1"}, {"port", 0}, {"channels", channels}};
  server_doc["data_dir"] = (dir / "data").string();
  server_doc["alert_log"] = (dir / "alerts.log").string();
  test_support::spit(dir / "server.json", server_doc.dump());
  const auto log_path = store::channel_log_path(dir / "data", 1);

  auto start_server = [&](int port) {
    auto child = std::make_unique<ChildProcess>(
        std::vector<std::string>{kCli, "serve", "--config", (dir / "server.json").string(), "--port",
                                 std::to_string(port)});
    const auto line = child->read_line(10000);
    int bound = 0;
    if (line && line->rfind("listening ", 0) == 0) bound = std::stoi(line->substr(10));
    return std::make_pair(std::move(child), bound);
  };

  auto [server, port] = start_server(0);
  if (port == 0) return {false, "server did not start"};

  auto cfg = base_agent(kTicks);
  cfg.local_log = dir / "device.ndjson";
  int killed_status = 0;
  agent::RunSummary run;
  {
    agent::HttpTransport transport(fmt::format("http://127.0.0.1:{}", port), 1, "WK");
    run = agent::run_agent(cfg, transport, [&](const agent::TickRecord& r) {
      if (r.tick == kKillAfter) {
        server->kill(SIGKILL);
        killed_status = server->wait();
      }
    });
  }

  // The device died mid-write as the server went down: leave half a record behind.
  const std::string before_tear = test_support::slurp(log_path);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(kKillAfter); ++i) offset = reference.find('\n', offset) + 1;
  const std::string next_line = reference.substr(offset, reference.find('\n', offset) - offset);
  test_support::spit(log_path, next_line.substr(0, next_line.size() / 2), true);

  auto [restarted, port2] = start_server(port);
  if (port2 == 0) return {false, "server did not restart"};
  const std::string recovered = test_support::slurp(log_path);
  const bool clean_prefix = recovered == before_tear && reference.compare(0, recovered.size(), recovered) == 0 &&
                            (recovered.empty() || recovered.back() == '\n');
  const std::size_t prefix_lines = test_support::count_lines(recovered);

  const auto replay = run_program({kCli, "replay", "--log", cfg.local_log->string(), "--server",
                                   fmt::format("http://127.0.0.1:{}", port2), "--write-key", "WK"});
  restarted->kill(SIGTERM);
  const int stop_status = restarted->wait();

  const std::string final_log = test_support::slurp(log_path);
  const bool restored = final_log == reference;
  const bool ok = killed_status == 128 + SIGKILL && run.unsent == kTicks - kKillAfter && clean_prefix &&
                  prefix_lines == static_cast<std::size_t>(kKillAfter) && replay.exit_code == 0 && restored &&
                  stop_status == 0;
  return {ok, fmt::format("killed after {} entries ({} frames unsent); recovered log {} ({} lines, torn {} bytes "
                          "dropped); replay exit {}; final log {} reference ({} lines)",
                          kKillAfter, run.unsent, clean_prefix ? "is a clean prefix" : "NOT a clean prefix",
                          prefix_lines, next_line.size() / 2, replay.exit_code,
                          restored ? "byte-identical to" : "DIFFERS from", test_support::count_lines(final_log))};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"setpoint regulation", setpoint_regulation},
      {"vital-band coherence", vital_band},
      {"servo-mode comparison", servo_comparison},
      {"alert latency", alert_latency},
      {"round-trip fidelity", round_trip},
      {"rate limiting", rate_limiting},
      {"determinism", determinism},
      {"crash recovery", crash_recovery},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    if (!o.pass) ++failed;
    std::cout << fmt::format("{} {} {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
              << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
  return failed == 0 ? 0 : 1;
}
