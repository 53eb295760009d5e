#include "kgdx/http_server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace kgdx {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::not_found: return 404;
        case ErrorCode::invalid_argument: return 400;
        case ErrorCode::invalid_state: return 409;
        case ErrorCode::conflict: return 409;
        case ErrorCode::forbidden: return 403;
        case ErrorCode::validation: return 422;
        case ErrorCode::parse: return 502;
        case ErrorCode::gateway: return 502;
        case ErrorCode::io: return 500;
    }
    return 500;
}

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;

    explicit Impl(Service& s) : service(s) {}
};

namespace {

using Req = httplib::Request;
using Res = httplib::Response;

void send_json(Res& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(Res& res, int status, std::string_view code, const std::string& message, const Json& extra = {}) {
    Json body = {{"error", {{"code", code}, {"message", message}}}};
    if (!extra.is_null()) body["error"].update(extra);
    send_json(res, body, status);
}

std::string token_of(const Req& req) {
    if (req.has_header("X-Role-Token")) return req.get_header_value("X-Role-Token");
    const auto auth = req.get_header_value("Authorization");
    constexpr std::string_view bearer = "Bearer ";
    if (auth.rfind(bearer, 0) == 0) return auth.substr(bearer.size());
    return {};
}

Json body_of(const Req& req) {
    if (trim(req.body).empty()) return Json::object();
    try {
        return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::invalid_argument, std::string("request body is not valid JSON: ") + e.what());
    }
}

std::optional<std::uint64_t> version_of(const Json& body) {
    auto it = body.find("version");
    if (it == body.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_unsigned()) throw Error(ErrorCode::invalid_argument, "version must be a non-negative integer");
    return it->get<std::uint64_t>();
}

std::string text_of(const Json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string()) {
        throw Error(ErrorCode::invalid_argument, std::string("body needs a string '") + key + "'");
    }
    return it->get<std::string>();
}

void send_events(Res& res, const std::vector<StreamEvent>& events) {
    std::string body;
    for (const auto& e : events) body += format_sse(e);
    res.status = 200;
    res.set_header("Cache-Control", "no-cache");
    res.set_content(body, "text/event-stream");
}

// Runs `fn` with the caller resolved from the role token and maps failures
// to status codes.
template <typename Fn>
httplib::Server::Handler guarded(Service& service, Fn fn) {
    return [&service, fn](const Req& req, Res& res) {
        try {
            const auto token = token_of(req);
            if (token.empty()) {
                send_error(res, 401, "unauthorized", "missing role token");
                return;
            }
            fn(service.authenticate(token), req, res);
        } catch (const ValidationError& e) {
            send_error(res, http_status(e.code()), to_string(e.code()), e.what(), {{"fields", e.fields()}});
        } catch (const Error& e) {
            send_error(res, http_status(e.code()), to_string(e.code()), e.what(), {{"retryable", e.retryable()}});
        } catch (const std::exception& e) {
            spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
            send_error(res, 500, "internal", e.what());
        }
    };
}

} // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    auto& svc = impl_->service;

    srv.Get("/api/health", [&svc](const Req&, Res& res) { send_json(res, svc.health()); });

    srv.Post("/api/sessions", guarded(svc, [&svc](const Caller& c, const Req&, Res& res) {
                 send_json(res, svc.create_session(c), 201);
             }));
    srv.Get("/api/sessions", guarded(svc, [&svc](const Caller& c, const Req&, Res& res) {
                send_json(res, svc.list_sessions(c));
            }));
    srv.Get("/api/sessions/:id", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_session(c, req.path_params.at("id")));
            }));
    srv.Post("/api/sessions/:id/messages", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_events(res, svc.post_message(c, req.path_params.at("id"), text_of(body_of(req), "text")));
             }));
    srv.Get("/api/sessions/:id/events", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                std::uint64_t after = 0;
                const auto raw = req.has_header("Last-Event-ID") ? req.get_header_value("Last-Event-ID")
                                                                 : req.get_param_value("after");
                if (!raw.empty()) {
                    try {
                        after = std::stoull(raw);
                    } catch (const std::exception&) {
                        throw Error(ErrorCode::invalid_argument, "event id must be a number");
                    }
                }
                send_events(res, svc.events_since(c, req.path_params.at("id"), after));
            }));
    srv.Get("/api/sessions/:id/history", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_history(c, req.path_params.at("id")));
            }));
    srv.Get("/api/sessions/:id/explanation", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_final_explanation(c, req.path_params.at("id")));
            }));
    srv.Get("/api/sessions/:id/notifications", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_notifications(c, req.path_params.at("id")));
            }));
    srv.Post("/api/sessions/:id/open", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.open_case(c, req.path_params.at("id")));
             }));
    srv.Get("/api/sessions/:id/diagnosis", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_diagnosis(c, req.path_params.at("id")));
            }));
    srv.Post("/api/sessions/:id/select", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.select_diagnosis(c, req.path_params.at("id"), text_of(body_of(req), "disease_id")));
             }));
    srv.Post("/api/sessions/:id/expand", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.expand(c, req.path_params.at("id"), text_of(body_of(req), "entity_id")));
             }));
    srv.Post("/api/sessions/:id/reports/:disease/edits",
             guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.edit_report(c, req.path_params.at("id"), req.path_params.at("disease"), body_of(req)));
             }));
    srv.Post("/api/sessions/:id/continue", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.continue_conversation(c, req.path_params.at("id"), text_of(body_of(req), "text")));
             }));
    srv.Post("/api/sessions/:id/finalize", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.finalize(c, req.path_params.at("id"), body_of(req)));
             }));

    srv.Get("/api/worklist", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_worklist(c, req.get_param_value("all") == "1"));
            }));
    srv.Get("/api/worklist/:id", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_event(c, req.path_params.at("id")));
            }));
    srv.Post("/api/worklist/:id/draft", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.draft_event(c, req.path_params.at("id"), version_of(body_of(req))));
             }));
    srv.Post("/api/worklist/:id/edits", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 const auto body = body_of(req);
                 send_json(res, svc.post_edit(c, req.path_params.at("id"), body, version_of(body)));
             }));
    srv.Post("/api/worklist/:id/approve", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.approve(c, req.path_params.at("id"), version_of(body_of(req))));
             }));
    srv.Post("/api/worklist/:id/reject", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                 send_json(res, svc.reject(c, req.path_params.at("id"), version_of(body_of(req))));
             }));
    srv.Get("/api/worklist/:id/diff", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.get_diff(c, req.path_params.at("id")));
            }));

    srv.Get("/api/kg/triples", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                std::optional<std::string> entity;
                if (req.has_param("entity")) entity = req.get_param_value("entity");
                send_json(res, svc.kg_triples(c, entity));
            }));
    srv.Get("/api/kg/entities/:id", guarded(svc, [&svc](const Caller& c, const Req& req, Res& res) {
                send_json(res, svc.kg_entity(c, req.path_params.at("id")));
            }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw Error(ErrorCode::io, "cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

} // namespace kgdx
