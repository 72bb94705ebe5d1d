#include "incubator/alert.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "incubator/error.hpp"

namespace incubator::alert {

std::string_view to_string(Severity s) { return s == Severity::warning ? "warning" : "critical"; }

std::string_view to_string(AlertState s) {
  switch (s) {
    case AlertState::pending: return "PENDING";
    case AlertState::active: return "ACTIVE";
    case AlertState::acknowledged: return "ACKNOWLEDGED";
    case AlertState::resolved: return "RESOLVED";
  }
  return "UNKNOWN";
}

Severity parse_severity(std::string_view text) {
  if (text == "warning") return Severity::warning;
  if (text == "critical") return Severity::critical;
  throw ConfigError(fmt::format("severity must be warning or critical, got '{}'", text));
}

void validate(const AlertRule& r) {
  if (r.field >= wire::kFieldCount) throw ConfigError("alert rule field out of range");
  if (!r.lower && !r.upper) throw ConfigError(fmt::format("rule '{}' needs a lower or upper bound", r.label));
  if ((r.lower && !std::isfinite(*r.lower)) || (r.upper && !std::isfinite(*r.upper))) {
    throw ConfigError(fmt::format("rule '{}' has a non-finite bound", r.label));
  }
  if (r.lower && r.upper && !(*r.lower < *r.upper)) {
    throw ConfigError(fmt::format("rule '{}' needs lower < upper", r.label));
  }
  if (r.debounce_n < 1 || r.clear_n < 1) {
    throw ConfigError(fmt::format("rule '{}' needs debounce_n >= 1 and clear_n >= 1", r.label));
  }
}

AlertRule parse_rule(const nlohmann::json& doc) {
  AlertRule r;
  try {
    r.field = wire::parse_field_name(doc.at("field").get<std::string>());
    if (doc.contains("lower") && !doc.at("lower").is_null()) r.lower = doc.at("lower").get<double>();
    if (doc.contains("upper") && !doc.at("upper").is_null()) r.upper = doc.at("upper").get<double>();
    r.debounce_n = doc.value("debounce_n", r.debounce_n);
    r.clear_n = doc.value("clear_n", r.clear_n);
    if (doc.contains("severity")) r.severity = parse_severity(doc.at("severity").get<std::string>());
    r.label = doc.value("label", wire::field_name(r.field));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("alert rule: {}", e.what()));
  } catch (const ValidationError& e) {
    throw ConfigError(fmt::format("alert rule: {}", e.what()));
  }
  validate(r);
  return r;
}

nlohmann::ordered_json rule_to_json(const AlertRule& r) {
  nlohmann::ordered_json j;
  j["field"] = wire::field_name(r.field);
  j["lower"] = r.lower ? nlohmann::ordered_json(*r.lower) : nlohmann::ordered_json(nullptr);
  j["upper"] = r.upper ? nlohmann::ordered_json(*r.upper) : nlohmann::ordered_json(nullptr);
  j["debounce_n"] = r.debounce_n;
  j["clear_n"] = r.clear_n;
  j["severity"] = to_string(r.severity);
  j["label"] = r.label;
  return j;
}

std::vector<AlertRule> default_rules() {
  using wire::Field;
  using wire::index_of;
  auto rule = [](Field f, std::optional<double> lo, std::optional<double> hi, Severity sev, std::string label) {
    AlertRule r;
    r.field = index_of(f);
    r.lower = lo;
    r.upper = hi;
    r.severity = sev;
    r.label = std::move(label);
    return r;
  };
  return {
      rule(Field::skin_temp, 36.5, 37.2, Severity::critical, "skin_temp"),
      rule(Field::air_temp, 34.0, 36.0, Severity::warning, "air_temp"),
      rule(Field::rh, 40.0, 60.0, Severity::warning, "humidity"),
      rule(Field::pulse, 100.0, 180.0, Severity::critical, "pulse"),
      rule(Field::gas, std::nullopt, 300.0, Severity::critical, "gas"),
      rule(Field::light, std::nullopt, 1000.0, Severity::warning, "light"),
  };
}

bool is_legal_transition(AlertState from, AlertState to) {
  switch (from) {
    case AlertState::pending: return to == AlertState::active;
    case AlertState::active: return to == AlertState::acknowledged || to == AlertState::resolved;
    case AlertState::acknowledged: return to == AlertState::resolved;
    case AlertState::resolved: return false;
  }
  return false;
}

Evaluation evaluate(const RuleState& state, const AlertRule& rule, double value) {
  Evaluation out{state, std::nullopt};
  RuleState& s = out.state;
  if (!rule.in_band(value)) {
    ++s.breach_count;
    s.clear_count = 0;
    if (!s.alert_open && s.breach_count >= rule.debounce_n) {
      s = RuleState{0, 0, true};
      out.transition = AlertState::active;
    }
  } else {
    ++s.clear_count;
    s.breach_count = 0;
    if (s.alert_open && s.clear_count >= rule.clear_n) {
      s = RuleState{0, 0, false};
      out.transition = AlertState::resolved;
    }
  }
  return out;
}

nlohmann::ordered_json transition_payload(const Transition& t) {
  nlohmann::ordered_json j;
  j["alert_id"] = t.alert.alert_id;
  j["channel_id"] = t.alert.channel_id;
  j["label"] = t.alert.label;
  j["state"] = to_string(t.state);
  j["field"] = wire::field_name(t.alert.field);
  j["value"] = t.value;
  j["ts"] = format_iso8601(t.ts);
  j["severity"] = to_string(t.alert.severity);
  return j;
}

Transition current_view(const Alert& a) {
  Transition t;
  t.alert = a;
  t.state = a.state;
  t.value = a.last_value;
  switch (a.state) {
    case AlertState::acknowledged: t.ts = a.acked_at.value_or(a.raised_at); break;
    case AlertState::resolved: t.ts = a.resolved_at.value_or(a.raised_at); break;
    default: t.ts = a.raised_at; break;
  }
  return t;
}

AlertBook::AlertBook(std::int64_t channel_id, std::vector<AlertRule> rules)
    : channel_id_(channel_id),
      rules_(std::move(rules)),
      rule_states_(rules_.size()),
      open_alert_(rules_.size()) {
  for (const auto& r : rules_) validate(r);
}

std::vector<Transition> AlertBook::on_entry(const wire::FeedEntry& entry) {
  std::vector<Transition> out;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const AlertRule& rule = rules_[i];
    const auto& raw = entry.fields[rule.field];
    if (!raw) continue;
    const auto value = wire::parse_number(*raw);
    if (!value) continue;

    const Evaluation ev = evaluate(rule_states_[i], rule, *value);
    rule_states_[i] = ev.state;
    if (open_alert_[i]) alerts_[*open_alert_[i]].last_value = *value;
    if (!ev.transition) continue;

    if (*ev.transition == AlertState::active) {
      Alert a;
      a.alert_id = next_alert_id_++;
      a.channel_id = channel_id_;
      a.rule_index = i;
      a.label = rule.label;
      a.field = rule.field;
      a.severity = rule.severity;
      a.state = AlertState::active;
      a.raised_at = entry.created_at;
      a.trigger_value = *value;
      a.last_value = *value;
      alerts_.push_back(a);
      open_alert_[i] = alerts_.size() - 1;
      out.push_back(Transition{a, AlertState::active, a.raised_at, *value});
    } else {
      Alert& a = alerts_[*open_alert_[i]];
      a.state = AlertState::resolved;
      a.resolved_at = std::max(entry.created_at, a.acked_at.value_or(a.raised_at));
      open_alert_[i].reset();
      out.push_back(Transition{a, AlertState::resolved, *a.resolved_at, *value});
    }
  }
  return out;
}

Transition AlertBook::acknowledge(std::int64_t alert_id, std::string who, Timestamp now) {
  const auto it = std::find_if(alerts_.begin(), alerts_.end(),
                               [&](const Alert& a) { return a.alert_id == alert_id; });
  if (it == alerts_.end()) throw NotFoundError(fmt::format("no alert {}", alert_id));
  if (it->state != AlertState::active) {
    throw ConflictError(fmt::format("alert {} is {}", alert_id, to_string(it->state)));
  }
  it->state = AlertState::acknowledged;
  it->acked_at = std::max(now, it->raised_at);
  it->acked_by = std::move(who);
  return Transition{*it, AlertState::acknowledged, *it->acked_at, it->last_value};
}

std::vector<Alert> AlertBook::open_alerts() const {
  std::vector<Alert> out;
  for (const auto& a : alerts_) {
    if (a.state == AlertState::active || a.state == AlertState::acknowledged) out.push_back(a);
  }
  return out;
}

LogSink::LogSink(std::shared_ptr<spdlog::logger> logger) : logger_(std::move(logger)) {}

DeliveryResult LogSink::deliver(const Transition& t) {
  logger_->info("alert {}", transition_payload(t).dump());
  logger_->flush();
  return {name(), true, 1};
}

namespace {

WebhookSink::Poster http_poster(std::string url, std::chrono::milliseconds timeout) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) throw ConfigError(fmt::format("bad webhook url '{}'", url));
  std::string origin = m[1].str();
  std::string path = m[2].matched ? m[2].str() : "/";
  return [origin = std::move(origin), path = std::move(path), timeout](const std::string& body) {
    httplib::Client client(origin);
    const auto secs = static_cast<time_t>(timeout.count() / 1000);
    const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_tcp_nodelay(true);
    const auto res = client.Post(path, body, "application/json");
    return res && res->status >= 200 && res->status < 300;
  };
}

}  // namespace

WebhookSink::WebhookSink(std::string url, RetryPolicy policy)
    : poster_(http_poster(std::move(url), policy.timeout)),
      policy_(std::move(policy)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

WebhookSink::WebhookSink(Poster poster, RetryPolicy policy, Sleeper sleeper)
    : poster_(std::move(poster)), policy_(std::move(policy)), sleeper_(std::move(sleeper)) {}

DeliveryResult WebhookSink::deliver(const Transition& t) {
  const std::string body = transition_payload(t).dump();
  DeliveryResult result{name(), false, 0};
  for (std::size_t attempt = 0; attempt <= policy_.backoff.size(); ++attempt) {
    if (attempt > 0) sleeper_(policy_.backoff[attempt - 1]);
    ++result.attempts;
    bool ok = false;
    try {
      ok = poster_(body);
    } catch (const std::exception& e) {
      spdlog::warn("webhook attempt {} threw: {}", result.attempts, e.what());
    }
    if (ok) {
      result.delivered = true;
      return result;
    }
  }
  spdlog::error("webhook delivery of alert {} ({}) dropped after {} attempts", t.alert.alert_id,
                to_string(t.state), result.attempts);
  return result;
}

std::vector<DeliveryResult> notify(const Transition& t, std::span<Sink* const> sinks) {
  std::vector<DeliveryResult> results;
  results.reserve(sinks.size());
  for (Sink* sink : sinks) {
    try {
      results.push_back(sink->deliver(t));
    } catch (const std::exception& e) {
      spdlog::error("sink {} failed: {}", sink->name(), e.what());
      results.push_back({sink->name(), false, 1});
    }
  }
  return results;
}

Notifier::Notifier(std::vector<std::unique_ptr<Sink>> sinks) : sinks_(std::move(sinks)) {
  worker_ = std::thread([this] { run(); });
}

Notifier::~Notifier() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void Notifier::post(Transition t) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(t));
  }
  cv_.notify_one();
}

void Notifier::drain() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

std::vector<DeliveryResult> Notifier::results() const {
  std::lock_guard lock(mutex_);
  return results_;
}

void Notifier::run() {
  std::vector<Sink*> sinks;
  for (auto& s : sinks_) sinks.push_back(s.get());
  std::unique_lock lock(mutex_);
  while (true) {
    cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) break;  // stopping with nothing left to send
    Transition t = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    lock.unlock();
    auto delivered = notify(t, sinks);
    lock.lock();
    busy_ = false;
    results_.insert(results_.end(), delivered.begin(), delivered.end());
    if (queue_.empty()) idle_cv_.notify_all();
  }
  idle_cv_.notify_all();
}

}  // namespace incubator::alert
