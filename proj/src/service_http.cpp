#include "ehrnip/errors.hpp"
#include "ehrnip/service_api.hpp"

#include <httplib.h>

namespace ehrnip {

struct SessionServer::Impl {
    SessionService& service;
    ServerOptions options;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    Impl(SessionService& s, ServerOptions o) : service(s), options(std::move(o)) {
        if (options.static_dir && !server.set_mount_point("/", options.static_dir->string())) {
            throw IoError("static directory not found: " + options.static_dir->string());
        }
        const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
            ServiceResponse r;
            try {
                r = service.handle(req.method, req.path, req.body);
            } catch (const std::exception& e) {
                r = error_response(500, "internal", e.what());
            }
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        };
        // Plain SO_REUSEADDR: the library default also sets SO_REUSEPORT, which lets
        // a second server share a port that is already taken.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        server.Post(R"(/sessions(/.*)?)", forward);
        server.Get(R"(/sessions(/.*)?)", forward);
    }

    void bind() {
        port = options.port == 0 ? server.bind_to_any_port(options.bind_address)
                                 : (server.bind_to_port(options.bind_address, options.port)
                                        ? options.port
                                        : -1);
        if (port < 0) {
            throw IoError("cannot bind " + options.bind_address + ":" +
                          std::to_string(options.port));
        }
    }
};

SessionServer::SessionServer(SessionService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

SessionServer::~SessionServer() { stop(); }

int SessionServer::start() {
    impl_->bind();
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void SessionServer::run() {
    impl_->bind();
    impl_->server.listen_after_bind();
}

void SessionServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ehrnip
