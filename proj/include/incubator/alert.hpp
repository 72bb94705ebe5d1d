#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "incubator/time.hpp"
#include "incubator/wire.hpp"

namespace spdlog {
class logger;
}

namespace incubator::alert {

enum class Severity { warning, critical };
enum class AlertState { pending, active, acknowledged, resolved };

std::string_view to_string(Severity s);
std::string_view to_string(AlertState s);
Severity parse_severity(std::string_view text);

struct AlertRule {
  std::size_t field = 0;  // 0-based: 0 is field1
  std::optional<double> lower;
  std::optional<double> upper;
  int debounce_n = 3;
  int clear_n = 5;
  Severity severity = Severity::warning;
  std::string label;

  bool in_band(double value) const {
    return (!lower || value >= *lower) && (!upper || value <= *upper);
  }
};

void validate(const AlertRule& rule);
AlertRule parse_rule(const nlohmann::json& doc);
nlohmann::ordered_json rule_to_json(const AlertRule& rule);

/// Skin band, air, RH, pulse, gas and light rules shipped with every channel
/// that does not declare its own.
std::vector<AlertRule> default_rules();

struct Alert {
  std::int64_t alert_id = 0;
  std::int64_t channel_id = 0;
  std::size_t rule_index = 0;
  std::string label;
  std::size_t field = 0;
  Severity severity = Severity::warning;
  AlertState state = AlertState::pending;
  Timestamp raised_at;
  std::optional<Timestamp> acked_at;
  std::optional<Timestamp> resolved_at;
  std::optional<std::string> acked_by;
  double trigger_value = 0.0;
  double last_value = 0.0;
};

bool is_legal_transition(AlertState from, AlertState to);

/// Debounce bookkeeping for one rule on one channel.
struct RuleState {
  int breach_count = 0;
  int clear_count = 0;
  bool alert_open = false;  // an ACTIVE or ACKNOWLEDGED alert exists
};

struct Evaluation {
  RuleState state;
  /// ACTIVE when this sample raised an alert, RESOLVED when it cleared one.
  std::optional<AlertState> transition;
};

/// Counts consecutive in/out-of-band samples. Raises on the debounce_n-th
/// consecutive breach, resolves an open alert on the clear_n-th consecutive
/// in-band sample, and resets both counters after either transition.
Evaluation evaluate(const RuleState& state, const AlertRule& rule, double value);

/// A state change of one alert, with the alert as it stands afterwards.
struct Transition {
  Alert alert;
  AlertState state = AlertState::active;
  Timestamp ts;
  double value = 0.0;
};

/// {"alert_id","channel_id","label","state","field","value","ts","severity"}
nlohmann::ordered_json transition_payload(const Transition& t);

/// Snapshot of an alert's current state in the same shape as a transition.
Transition current_view(const Alert& a);

/// Alert lifecycle for one channel. Not synchronized: the ingest path owns it
/// under the channel's lock.
class AlertBook {
 public:
  AlertBook(std::int64_t channel_id, std::vector<AlertRule> rules);

  /// Evaluates every rule whose field is present and numeric.
  std::vector<Transition> on_entry(const wire::FeedEntry& entry);

  /// Throws NotFoundError for an unknown id and ConflictError unless ACTIVE.
  Transition acknowledge(std::int64_t alert_id, std::string who, Timestamp now);

  /// ACTIVE and ACKNOWLEDGED alerts, ascending by alert_id.
  std::vector<Alert> open_alerts() const;
  const std::vector<Alert>& all_alerts() const { return alerts_; }
  const std::vector<AlertRule>& rules() const { return rules_; }
  const std::vector<RuleState>& rule_states() const { return rule_states_; }

 private:
  std::int64_t channel_id_;
  std::vector<AlertRule> rules_;
  std::vector<RuleState> rule_states_;
  std::vector<std::optional<std::size_t>> open_alert_;  // per rule, index into alerts_
  std::vector<Alert> alerts_;
  std::int64_t next_alert_id_ = 1;
};

struct DeliveryResult {
  std::string sink;
  bool delivered = false;
  int attempts = 0;
};

class Sink {
 public:
  virtual ~Sink() = default;
  virtual std::string name() const = 0;
  virtual DeliveryResult deliver(const Transition& t) = 0;
};

/// One log line per transition.
class LogSink final : public Sink {
 public:
  explicit LogSink(std::shared_ptr<spdlog::logger> logger);
  std::string name() const override { return "log"; }
  DeliveryResult deliver(const Transition& t) override;

 private:
  std::shared_ptr<spdlog::logger> logger_;
};

struct RetryPolicy {
  /// Waits between attempts; one initial attempt plus one retry per entry.
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                 std::chrono::seconds(4)};
  std::chrono::milliseconds timeout{std::chrono::seconds(2)};
};

/// POSTs the transition payload as JSON. Non-2xx or transport failure is
/// retried per the policy, then dropped with a logged error.
class WebhookSink final : public Sink {
 public:
  using Poster = std::function<bool(const std::string& body)>;
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit WebhookSink(std::string url, RetryPolicy policy = {});
  /// Test seam: replaces the HTTP call and the backoff wait.
  WebhookSink(Poster poster, RetryPolicy policy, Sleeper sleeper);

  std::string name() const override { return "webhook"; }
  DeliveryResult deliver(const Transition& t) override;

 private:
  Poster poster_;
  RetryPolicy policy_;
  Sleeper sleeper_;
};

/// Delivers to every sink in order. Never throws.
std::vector<DeliveryResult> notify(const Transition& t, std::span<Sink* const> sinks);

/// Background dispatcher so slow sinks never block ingestion.
class Notifier {
 public:
  explicit Notifier(std::vector<std::unique_ptr<Sink>> sinks);
  ~Notifier();
  Notifier(const Notifier&) = delete;
  Notifier& operator=(const Notifier&) = delete;

  void post(Transition t);
  /// Blocks until every posted transition has been delivered or dropped.
  void drain();
  std::vector<DeliveryResult> results() const;

 private:
  void run();

  std::vector<std::unique_ptr<Sink>> sinks_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Transition> queue_;
  std::vector<DeliveryResult> results_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace incubator::alert
