#include "harness/http_api.hpp"

#include <httplib.h>

#include "harness/error.hpp"

namespace harness::http {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::unauthorized: return 401;
    case ErrorCode::already_resolved:
    case ErrorCode::state_mismatch:
    case ErrorCode::illegal_transition: return 409;
    case ErrorCode::invalid_issue:
    case ErrorCode::empty_issue:
    case ErrorCode::shape_mismatch:
    case ErrorCode::invalid_argument:
    case ErrorCode::parse_error: return 422;
    case ErrorCode::backend_unreachable: return 502;
    default: return 500;
  }
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send(res, status_for(code), {{"error", std::string(to_string(code))}, {"message", message}});
}

json body_of(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, std::string("request body: ") + e.what());
  }
}

}  // namespace

std::pair<std::string, int> parse_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "listen address needs host:port");
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "bad port in " + listen);
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::invalid_argument, "bad port in " + listen);
  return {listen.substr(0, colon), port};
}

Api::Api(service::Service& service, std::string token)
    : service_(service), token_(std::move(token)), server_(std::make_unique<httplib::Server>()) {
  routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Api::~Api() {
  stop();
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

bool Api::listen(const std::string& host, int port) { return server_->listen(host, port); }
int Api::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool Api::serve() { return server_->listen_after_bind(); }
void Api::stop() { server_->stop(); }

void Api::enqueue(const std::string& run_id) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(run_id);
  }
  cv_.notify_all();
}

void Api::drain() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void Api::worker_loop() {
  std::unique_lock lock(mu_);
  while (true) {
    cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) return;
    const std::string run_id = queue_.front();
    queue_.pop_front();
    busy_ = true;
    lock.unlock();
    try {
      service_.drive(run_id);
    } catch (const std::exception&) {
      // The run keeps its last persisted state; the console shows it as is.
    }
    lock.lock();
    busy_ = false;
    cv_.notify_all();
  }
}

void Api::routes() {
  auto& s = *server_;
  s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (token_.empty() || req.get_header_value("Authorization") == "Bearer " + token_) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send_error(res, ErrorCode::unauthorized, "missing or wrong operator token");
    return httplib::Server::HandlerResponse::Handled;
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      send(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  });

  s.Post("/api/v1/runs", [this](const httplib::Request& req, httplib::Response& res) {
    const json body = body_of(req);
    const std::string run_id = service_.submit_issue(body);
    const std::string mode = req.has_param("drive") ? req.get_param_value("drive") : "async";
    if (mode == "sync") {
      service_.drive(run_id);
    } else if (mode != "none") {
      enqueue(run_id);
    }
    send(res, 201, {{"run_id", run_id}});
  });
  s.Get("/api/v1/runs", [this](const httplib::Request&, httplib::Response& res) { send(res, 200, service_.list_runs()); });
  s.Get(R"(/api/v1/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, service_.run_detail(req.matches[1]));
  });
  s.Post(R"(/api/v1/runs/([^/]+)/reports)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, service_.report_post_merge(req.matches[1], body_of(req)));
  });
  s.Get("/api/v1/tickets", [this](const httplib::Request&, httplib::Response& res) {
    send(res, 200, service_.pending_tickets());
  });
  s.Post(R"(/api/v1/tickets/(.+)/resolve)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, service_.resolve_ticket(req.matches[1], body_of(req)));
  });
  s.Get("/api/v1/metrics", [this](const httplib::Request& req, httplib::Response& res) {
    const auto window = calibration::TimeWindow::parse(req.has_param("window") ? req.get_param_value("window") : "");
    send(res, 200, calibration::to_json(service_.metrics(window)));
  });
  s.Get("/api/v1/memory", [this](const httplib::Request&, httplib::Response& res) {
    res.status = 200;
    res.set_content(service_.memory_text(), "text/markdown");
  });
}

}  // namespace harness::http
