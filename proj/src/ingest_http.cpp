#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "incubator/error.hpp"
#include "incubator/ingest.hpp"

namespace incubator::ingest {

namespace {

constexpr auto kStreamPoll = std::chrono::milliseconds(200);
constexpr int kKeepaliveEvery = 75;  // polls, about 15 s

void apply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (r.status != 204) res.set_content(r.body, r.content_type);
}

std::int64_t channel_arg(const httplib::Request& req, std::size_t index = 1) {
  return std::stoll(req.matches[index].str());
}

std::string key_of(const httplib::Request& req) {
  return req.has_param("api_key") ? req.get_param_value("api_key") : std::string{};
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& svr = *server_;
  // Small request/response pairs; without this Nagle plus delayed ACK adds ~40 ms per round trip.
  svr.set_tcp_nodelay(true);

  svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

  svr.Post("/update", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.handle_update(req.body));
  });

  svr.Get(R"(/channels/(\d+)/feeds\.json)", [this](const httplib::Request& req, httplib::Response& res) {
    FeedsQuery q{key_of(req), param(req, "results"), param(req, "start"), param(req, "end")};
    apply(res, service_.handle_feeds(channel_arg(req), q));
  });

  svr.Get(R"(/channels/(\d+)/channel\.json)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.channel_info(channel_arg(req), key_of(req)));
  });

  svr.Post(R"(/channels/(\d+)/commands)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.post_command(channel_arg(req), key_of(req), req.body));
  });

  svr.Get(R"(/channels/(\d+)/commands/next)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.poll_command(channel_arg(req), key_of(req)));
  });

  svr.Get(R"(/channels/(\d+)/alerts\.json)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.list_alerts(channel_arg(req), key_of(req)));
  });

  svr.Post(R"(/channels/(\d+)/alerts/(\d+)/ack)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(res, service_.acknowledge(channel_arg(req), std::stoll(req.matches[2].str()), key_of(req), req.body));
  });

  svr.Get(R"(/channels/(\d+)/alerts/stream)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<Subscription> sub;
    try {
      sub = service_.subscribe(channel_arg(req), key_of(req));
    } catch (const NotFoundError&) {
      apply(res, {404, "not found", "text/plain"});
      return;
    } catch (const AuthError&) {
      apply(res, {401, "unauthorized", "text/plain"});
      return;
    }
    res.set_header("Cache-Control", "no-cache");
    auto idle = std::make_shared<int>(0);
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub, idle](std::size_t, httplib::DataSink& sink) {
          if (sub->closed()) {
            sink.done();
            return true;
          }
          if (auto frame = sub->next(kStreamPoll)) {
            *idle = 0;
            return sink.write(frame->data(), frame->size());
          }
          if (++*idle >= kKeepaliveEvery) {
            *idle = 0;
            static constexpr std::string_view kPing = ": keepalive\n\n";
            return sink.write(kPing.data(), kPing.size());
          }
          return true;
        },
        [sub](bool) { sub->close(); });
  });

  if (service_.config().static_dir) {
    if (!svr.set_mount_point("/", service_.config().static_dir->string())) {
      spdlog::warn("static_dir {} does not exist; dashboard not served", service_.config().static_dir->string());
    }
  }

  svr.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
    }
    res.status = 500;
    res.set_content("internal error", "text/plain");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw Error(fmt::format("cannot bind {}", host));
  } else {
    if (!server_->bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
    port_ = port;
  }
  return port_;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  service_.close_streams();
  if (server_->is_running()) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace incubator::ingest
