#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "incubator/error.hpp"
#include "incubator/ingest.hpp"

namespace incubator::ingest {

namespace {

Response text(int status, std::string body) { return {status, std::move(body), "text/plain"}; }

Response json_response(int status, const nlohmann::ordered_json& doc) {
  return {status, doc.dump(), "application/json"};
}

nlohmann::ordered_json alert_to_json(const alert::Alert& a) {
  auto opt_ts = [](const std::optional<Timestamp>& t) {
    return t ? nlohmann::ordered_json(format_iso8601(*t)) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["alert_id"] = a.alert_id;
  j["channel_id"] = a.channel_id;
  j["label"] = a.label;
  j["field"] = wire::field_name(a.field);
  j["severity"] = alert::to_string(a.severity);
  j["state"] = alert::to_string(a.state);
  j["raised_at"] = format_iso8601(a.raised_at);
  j["acked_at"] = opt_ts(a.acked_at);
  j["acked_by"] = a.acked_by ? nlohmann::ordered_json(*a.acked_by) : nlohmann::ordered_json(nullptr);
  j["resolved_at"] = opt_ts(a.resolved_at);
  j["trigger_value"] = a.trigger_value;
  j["last_value"] = a.last_value;
  return j;
}

double wall_clock() {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  return std::chrono::duration<double>(now).count();
}

std::shared_ptr<spdlog::logger> make_alert_logger(const std::optional<std::filesystem::path>& path) {
  static std::atomic<int> counter{0};
  const std::string name = fmt::format("alerts-{}", counter++);
  if (path) return spdlog::basic_logger_mt(name, path->string());
  return spdlog::stderr_logger_mt(name);
}

/// Removes api_key pairs from a form body, keeping the other segments verbatim.
std::pair<std::string, std::string> split_key(std::string_view body) {
  std::string key;
  std::vector<std::string_view> kept;
  while (!body.empty()) {
    const auto amp = body.find('&');
    const std::string_view seg = body.substr(0, amp);
    body = amp == std::string_view::npos ? std::string_view{} : body.substr(amp + 1);
    if (seg.starts_with("api_key=")) {
      key = wire::percent_decode(seg.substr(8));
    } else if (!seg.empty()) {
      kept.push_back(seg);
    }
  }
  std::string rest;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) rest += '&';
    rest += kept[i];
  }
  return {key, rest};
}

}  // namespace

void Subscription::push(std::string frame) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    frames_.push_back(std::move(frame));
  }
  cv_.notify_all();
}

std::optional<std::string> Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [this] { return closed_ || !frames_.empty(); });
  if (frames_.empty()) return std::nullopt;
  std::string f = std::move(frames_.front());
  frames_.pop_front();
  return f;
}

void Subscription::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscription::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::string sse_frame(const alert::Transition& t) {
  return fmt::format("event: alert\ndata: {}\n\n", alert::transition_payload(t).dump());
}

struct Service::Channel {
  Channel(ChannelConfig c, store::ChannelLog l)
      : cfg(std::move(c)), log(std::move(l)), book(cfg.channel_id, cfg.alert_rules) {}

  ChannelConfig cfg;
  mutable std::mutex mutex;
  store::ChannelLog log;
  alert::AlertBook book;
  std::deque<wire::Command> commands;
  std::int64_t next_command_id = 1;
  std::optional<double> last_admission;
  std::vector<std::weak_ptr<Subscription>> subscribers;
};

Service::Service(ServerConfig config, ServiceOptions options)
    : config_(std::move(config)),
      clock_(options.clock ? std::move(options.clock) : std::function<double()>(wall_clock)),
      stopping_(std::make_shared<std::atomic<bool>>(false)) {
  for (const auto& cfg : config_.channels) {
    auto log = store::ChannelLog::open(store::channel_log_path(config_.data_dir, cfg.channel_id),
                                       options.log_options);
    if (log.recovery().truncated_tail) {
      spdlog::warn("channel {}: dropped a torn record during recovery", cfg.channel_id);
    }
    auto ch = std::make_unique<Channel>(cfg, std::move(log));
    if (const auto last = ch->log.last_created_at()) ch->last_admission = static_cast<double>(last->seconds);
    channels_.emplace(cfg.channel_id, std::move(ch));
  }

  std::vector<std::unique_ptr<alert::Sink>> sinks;
  sinks.push_back(std::make_unique<alert::LogSink>(make_alert_logger(config_.alert_log)));
  if (config_.webhook_url) {
    sinks.push_back(std::make_unique<alert::WebhookSink>(*config_.webhook_url, options.webhook_retry));
  }
  for (auto& s : options.extra_sinks) sinks.push_back(std::move(s));
  notifier_ = std::make_unique<alert::Notifier>(std::move(sinks));
}

Service::~Service() { close_streams(); }

Service::Channel* Service::find(std::int64_t channel_id) const {
  const auto it = channels_.find(channel_id);
  return it == channels_.end() ? nullptr : it->second.get();
}

Service::Channel* Service::find_by_write_key(std::string_view key) const {
  for (const auto& [id, ch] : channels_) {
    if (ch->cfg.write_key == key) return ch.get();
  }
  return nullptr;
}

void Service::publish(Channel& ch, const std::vector<alert::Transition>& transitions) {
  if (transitions.empty()) return;
  std::erase_if(ch.subscribers, [](const auto& w) {
    const auto s = w.lock();
    return !s || s->closed();
  });
  for (const auto& t : transitions) {
    const std::string frame = sse_frame(t);
    for (const auto& w : ch.subscribers) {
      if (const auto s = w.lock()) s->push(frame);
    }
    notifier_->post(t);
  }
}

Response Service::handle_update(std::string_view body) {
  wire::ParsedUpdate update;
  try {
    update = wire::parse_update(body);
  } catch (const AuthError& e) {
    return text(401, e.what());
  } catch (const FormatError& e) {
    return text(400, e.what());
  }

  Channel* ch = find_by_write_key(update.api_key);
  if (!ch) return text(401, "unauthorized");
  if (std::none_of(update.fields.begin(), update.fields.end(), [](const auto& f) { return f.has_value(); })) {
    return text(400, "update carries no fields");
  }

  std::lock_guard lock(ch->mutex);
  const auto last_ts = ch->log.last_created_at();
  if (update.created_at && last_ts && *update.created_at < *last_ts) {
    return text(400, "created_at precedes the previous entry");
  }
  const double admission = update.created_at ? static_cast<double>(update.created_at->seconds) : clock_();
  if (ch->last_admission && admission - *ch->last_admission < ch->cfg.min_update_interval_s) {
    return text(429, "0");
  }

  wire::FeedEntry entry;
  entry.entry_id = ch->log.next_entry_id();
  entry.fields = std::move(update.fields);
  if (update.created_at) {
    entry.created_at = *update.created_at;
  } else {
    entry.created_at = Timestamp{static_cast<std::int64_t>(std::floor(admission))};
    if (last_ts && entry.created_at < *last_ts) entry.created_at = *last_ts;
  }

  try {
    ch->log.append(entry);
  } catch (const StorageError& e) {
    spdlog::error("channel {}: {}", ch->cfg.channel_id, e.what());
    return text(500, "storage failure");
  }
  ch->last_admission = admission;

  publish(*ch, ch->book.on_entry(entry));
  return text(200, std::to_string(entry.entry_id));
}

Response Service::handle_feeds(std::int64_t channel_id, const FeedsQuery& q) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  if (q.api_key != ch->cfg.read_key) return text(401, "unauthorized");

  std::size_t results = kDefaultResults;
  if (q.results) {
    std::size_t n = 0;
    const auto* end = q.results->data() + q.results->size();
    const auto [ptr, ec] = std::from_chars(q.results->data(), end, n);
    if (ec != std::errc{} || ptr != end) return text(400, "results must be a non-negative integer");
    results = std::min(n, kMaxResults);
  }
  std::optional<Timestamp> start, stop;
  if (q.start) {
    start = parse_iso8601(*q.start);
    if (!start) return text(400, "start must be YYYY-MM-DDTHH:MM:SSZ");
  }
  if (q.end) {
    stop = parse_iso8601(*q.end);
    if (!stop) return text(400, "end must be YYYY-MM-DDTHH:MM:SSZ");
  }

  std::vector<wire::FeedEntry> entries;
  {
    std::lock_guard lock(ch->mutex);
    entries = ch->log.query(results, start, stop);
  }
  const wire::ChannelMeta meta{ch->cfg.channel_id, ch->cfg.name, ch->cfg.created_at};
  return {200, wire::encode_feeds(meta, entries), "application/json"};
}

Response Service::post_command(std::int64_t channel_id, std::string_view api_key, std::string_view body) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  auto [body_key, rest] = split_key(body);
  const std::string key = api_key.empty() ? body_key : std::string(api_key);
  if (key != ch->cfg.write_key) return text(401, "unauthorized");
  try {
    wire::parse_command_body(rest);
  } catch (const ValidationError& e) {
    return text(400, e.what());
  }

  std::lock_guard lock(ch->mutex);
  wire::Command cmd;
  cmd.command_id = ch->next_command_id++;
  cmd.body = std::move(rest);
  cmd.created_at = Timestamp{static_cast<std::int64_t>(std::floor(clock_()))};
  ch->commands.push_back(cmd);
  return text(200, std::to_string(cmd.command_id));
}

Response Service::poll_command(std::int64_t channel_id, std::string_view api_key) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  if (api_key != ch->cfg.write_key) return text(401, "unauthorized");
  std::lock_guard lock(ch->mutex);
  if (ch->commands.empty()) return text(204, "");
  wire::Command cmd = std::move(ch->commands.front());
  ch->commands.pop_front();
  cmd.consumed = true;
  return json_response(200, wire::command_to_json(cmd));
}

Response Service::acknowledge(std::int64_t channel_id, std::int64_t alert_id, std::string_view api_key,
                              std::string_view body) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  auto [body_key, rest] = split_key(body);
  const std::string key = api_key.empty() ? body_key : std::string(api_key);
  if (key != ch->cfg.read_key) return text(401, "unauthorized");
  std::string who = "unknown";
  for (auto& [k, v] : wire::split_form(rest)) {
    if (k == "who" && !v.empty()) who = std::move(v);
  }

  std::lock_guard lock(ch->mutex);
  try {
    const Timestamp now{static_cast<std::int64_t>(std::floor(clock_()))};
    auto t = ch->book.acknowledge(alert_id, who, now);
    publish(*ch, {t});
    return json_response(200, alert_to_json(t.alert));
  } catch (const NotFoundError& e) {
    return text(404, e.what());
  } catch (const ConflictError& e) {
    return text(409, e.what());
  }
}

Response Service::channel_info(std::int64_t channel_id, std::string_view api_key) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  if (api_key != ch->cfg.read_key) return text(401, "unauthorized");
  nlohmann::ordered_json doc;
  doc["id"] = ch->cfg.channel_id;
  doc["name"] = ch->cfg.name;
  doc["created_at"] = format_iso8601(ch->cfg.created_at);
  doc["min_update_interval_s"] = ch->cfg.min_update_interval_s;
  for (std::size_t i = 0; i < wire::kFieldCount; ++i) {
    const auto& n = ch->cfg.field_names[i];
    doc["field_names"][wire::field_name(i)] = n ? nlohmann::ordered_json(*n) : nlohmann::ordered_json(nullptr);
  }
  doc["alert_rules"] = nlohmann::ordered_json::array();
  for (const auto& r : ch->cfg.alert_rules) doc["alert_rules"].push_back(alert::rule_to_json(r));
  return json_response(200, doc);
}

Response Service::list_alerts(std::int64_t channel_id, std::string_view api_key) {
  Channel* ch = find(channel_id);
  if (!ch) return text(404, "not found");
  if (api_key != ch->cfg.read_key) return text(401, "unauthorized");
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  std::lock_guard lock(ch->mutex);
  for (const auto& a : ch->book.all_alerts()) doc.push_back(alert_to_json(a));
  return json_response(200, doc);
}

std::shared_ptr<Subscription> Service::subscribe(std::int64_t channel_id, std::string_view api_key) {
  Channel* ch = find(channel_id);
  if (!ch) throw NotFoundError(fmt::format("no channel {}", channel_id));
  if (api_key != ch->cfg.read_key) throw AuthError("unauthorized");
  auto sub = std::make_shared<Subscription>();
  std::lock_guard lock(ch->mutex);
  for (const auto& a : ch->book.open_alerts()) sub->push(sse_frame(alert::current_view(a)));
  ch->subscribers.push_back(sub);
  return sub;
}

void Service::drain_notifications() { notifier_->drain(); }

void Service::close_streams() {
  stopping_->store(true);
  for (auto& [id, ch] : channels_) {
    std::lock_guard lock(ch->mutex);
    for (const auto& w : ch->subscribers) {
      if (const auto s = w.lock()) s->close();
    }
    ch->subscribers.clear();
  }
}

std::vector<wire::FeedEntry> Service::entries(std::int64_t channel_id) const {
  Channel* ch = find(channel_id);
  if (!ch) throw NotFoundError(fmt::format("no channel {}", channel_id));
  std::lock_guard lock(ch->mutex);
  return ch->log.entries();
}

std::vector<alert::Alert> Service::alerts(std::int64_t channel_id) const {
  Channel* ch = find(channel_id);
  if (!ch) throw NotFoundError(fmt::format("no channel {}", channel_id));
  std::lock_guard lock(ch->mutex);
  return ch->book.all_alerts();
}

std::vector<alert::DeliveryResult> Service::delivery_results() const { return notifier_->results(); }

}  // namespace incubator::ingest
