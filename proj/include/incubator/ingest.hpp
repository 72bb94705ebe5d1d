#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "incubator/alert.hpp"
#include "incubator/store.hpp"
#include "incubator/wire.hpp"

namespace httplib {
class Server;
}

namespace incubator::ingest {

struct ChannelConfig {
  std::int64_t channel_id = 0;
  std::string name;
  std::string write_key;
  std::string read_key;
  wire::FieldValues field_names;
  double min_update_interval_s = 1.0;
  Timestamp created_at;
  std::vector<alert::AlertRule> alert_rules;
};

struct ServerConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::filesystem::path data_dir = "data";
  std::vector<ChannelConfig> channels;
  std::optional<std::string> webhook_url;
  /// Log-sink destination; standard error when unset.
  std::optional<std::filesystem::path> alert_log;
  /// Served at GET / when set (the dashboard build output).
  std::optional<std::filesystem::path> static_dir;
};

/// Throws ConfigError. Channels without "alert_rules" get alert::default_rules().
ServerConfig parse_server_config(const nlohmann::json& doc);
ServerConfig load_server_config(const std::filesystem::path& path);

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "text/plain";
};

struct FeedsQuery {
  std::string api_key;
  std::optional<std::string> results;
  std::optional<std::string> start;
  std::optional<std::string> end;
};

inline constexpr std::size_t kDefaultResults = 100;
inline constexpr std::size_t kMaxResults = 8000;

/// Server-sent-event queue for one stream client.
class Subscription {
 public:
  void push(std::string frame);
  /// Next frame, or nullopt after `timeout` or once closed.
  std::optional<std::string> next(std::chrono::milliseconds timeout);
  void close();
  bool closed() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> frames_;
  bool closed_ = false;
};

/// "event: alert\ndata: <payload>\n\n"
std::string sse_frame(const alert::Transition& t);

struct ServiceOptions {
  /// Unix time in seconds with sub-second precision; the rate-limit clock.
  std::function<double()> clock;
  store::LogOptions log_options;
  alert::RetryPolicy webhook_retry;
  /// Additional sinks beside the log sink and the configured webhook.
  std::vector<std::unique_ptr<alert::Sink>> extra_sinks;
};

/// The channel model independent of HTTP. All mutations of one channel are
/// serialized on that channel's mutex; channels proceed independently.
class Service {
 public:
  explicit Service(ServerConfig config, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle_update(std::string_view body);
  Response handle_feeds(std::int64_t channel_id, const FeedsQuery& query);
  Response post_command(std::int64_t channel_id, std::string_view api_key, std::string_view body);
  Response poll_command(std::int64_t channel_id, std::string_view api_key);
  Response acknowledge(std::int64_t channel_id, std::int64_t alert_id, std::string_view api_key,
                       std::string_view body);
  Response channel_info(std::int64_t channel_id, std::string_view api_key);
  Response list_alerts(std::int64_t channel_id, std::string_view api_key);

  /// Registers a stream client and queues the replay of open alerts.
  /// Throws NotFoundError or AuthError.
  std::shared_ptr<Subscription> subscribe(std::int64_t channel_id, std::string_view api_key);

  /// Waits for queued notifications to finish.
  void drain_notifications();
  /// Closes every stream subscription.
  void close_streams();

  const ServerConfig& config() const { return config_; }
  std::vector<wire::FeedEntry> entries(std::int64_t channel_id) const;
  std::vector<alert::Alert> alerts(std::int64_t channel_id) const;
  std::vector<alert::DeliveryResult> delivery_results() const;

 private:
  struct Channel;

  Channel* find(std::int64_t channel_id) const;
  Channel* find_by_write_key(std::string_view key) const;
  void publish(Channel& ch, const std::vector<alert::Transition>& transitions);

  ServerConfig config_;
  std::function<double()> clock_;
  std::map<std::int64_t, std::unique_ptr<Channel>> channels_;
  std::unique_ptr<alert::Notifier> notifier_;
  std::shared_ptr<std::atomic<bool>> stopping_;
};

/// HTTP front end for a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and returns the bound port. Throws Error on failure.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  /// Serves on the calling thread until stop().
  void listen();
  void stop();
  int port() const { return port_; }

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace incubator::ingest
