#include <regex>

#include "greentwin/grid_signal.hpp"
#include "httplib.h"

namespace greentwin {

std::optional<std::string> http_fetch(const std::string& url) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, kUrl)) return std::nullopt;
    const std::string base = m[1].str();
    const std::string path = m[2].matched ? m[2].str() : "/";
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (base.rfind("https://", 0) == 0) return std::nullopt;
#endif
    httplib::Client client(base);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(10, 0);
    client.set_follow_location(true);
    auto res = client.Get(path);
    if (!res || res->status != 200) return std::nullopt;
    return res->body;
}

}  // namespace greentwin
