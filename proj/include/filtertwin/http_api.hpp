#pragma once

// HTTP/JSON front end of the twin service.

#include <memory>
#include <string>
#include <thread>

#include "filtertwin/twin.hpp"

namespace httplib {
class Server;
}

namespace filtertwin {

class HttpServer {
public:
  explicit HttpServer(TwinService& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

private:
  void install_routes();

  TwinService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace filtertwin
