#pragma once

#include "kgdx/service.hpp"

#include <memory>
#include <string>

namespace kgdx {

int http_status(ErrorCode code);

// REST + SSE binding of Service. Role tokens arrive as
// "Authorization: Bearer <token>" or "X-Role-Token: <token>".
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void listen();
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace kgdx
