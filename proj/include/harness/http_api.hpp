#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "harness/service.hpp"

namespace httplib {
class Server;
}

namespace harness::http {

// /api/v1 over cpp-httplib. With a non-empty token every request must carry
// `Authorization: Bearer <token>`. Runs submitted through the API are driven
// by one background worker, so requests return as soon as the issue event is
// persisted and the console polls for progress.
class Api {
 public:
  Api(service::Service& service, std::string token);
  ~Api();
  Api(const Api&) = delete;
  Api& operator=(const Api&) = delete;

  // Blocks until stop(). Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port for tests; call serve() afterwards.
  int bind_any_port(const std::string& host);
  bool serve();
  void stop();

  // Waits until every queued drive has finished.
  void drain();

 private:
  void routes();
  void enqueue(const std::string& run_id);
  void worker_loop();

  service::Service& service_;
  std::string token_;
  std::unique_ptr<httplib::Server> server_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

// "host:port" -> pair; invalid-argument when the port is missing or bad.
std::pair<std::string, int> parse_listen(const std::string& listen);

}  // namespace harness::http
