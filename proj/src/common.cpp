#include "kgdx/common.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

namespace kgdx {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::invalid_state: return "invalid_state";
        case ErrorCode::conflict: return "conflict";
        case ErrorCode::forbidden: return "forbidden";
        case ErrorCode::validation: return "validation";
        case ErrorCode::parse: return "parse";
        case ErrorCode::gateway: return "gateway";
        case ErrorCode::io: return "io";
    }
    return "unknown";
}

std::string format_rfc3339(Timestamp t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02u:%02u:%02uZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<unsigned>(hms.hours().count()),
                  static_cast<unsigned>(hms.minutes().count()),
                  static_cast<unsigned>(hms.seconds().count()));
    return buf;
}

namespace {

int read_int(std::string_view text, std::size_t pos, std::size_t len) {
    if (pos + len > text.size()) {
        throw Error(ErrorCode::invalid_argument, "timestamp too short: " + std::string(text));
    }
    int value = 0;
    const char* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, value);
    if (ec != std::errc{} || ptr != first + len) {
        throw Error(ErrorCode::invalid_argument, "malformed timestamp: " + std::string(text));
    }
    return value;
}

} // namespace

// Accepts YYYY-MM-DDTHH:MM:SS[.frac](Z|±HH:MM); fractional seconds are dropped.
Timestamp parse_rfc3339(std::string_view text) {
    using namespace std::chrono;
    auto bad = [&] {
        return Error(ErrorCode::invalid_argument, "malformed timestamp: " + std::string(text));
    };
    if (text.size() < 20 || text[4] != '-' || text[7] != '-' ||
        (text[10] != 'T' && text[10] != 't' && text[10] != ' ') || text[13] != ':' ||
        text[16] != ':') {
        throw bad();
    }
    const year_month_day ymd{year{read_int(text, 0, 4)},
                             month{static_cast<unsigned>(read_int(text, 5, 2))},
                             day{static_cast<unsigned>(read_int(text, 8, 2))}};
    if (!ymd.ok()) throw bad();
    const int hh = read_int(text, 11, 2);
    const int mm = read_int(text, 14, 2);
    const int ss = read_int(text, 17, 2);
    if (hh > 23 || mm > 59 || ss > 60) throw bad();

    std::size_t pos = 19;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    if (pos >= text.size()) throw bad();
    seconds offset{0};
    if (text[pos] == 'Z' || text[pos] == 'z') {
        ++pos;
    } else if (text[pos] == '+' || text[pos] == '-') {
        const int sign = text[pos] == '+' ? 1 : -1;
        if (pos + 6 != text.size() || text[pos + 3] != ':') throw bad();
        offset = sign * (hours{read_int(text, pos + 1, 2)} + minutes{read_int(text, pos + 4, 2)});
        pos += 6;
    } else {
        throw bad();
    }
    if (pos != text.size()) throw bad();
    return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} - offset;
}

Timestamp SystemClock::now() const {
    return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
}

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || uc >= 0x80) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

std::string trim(std::string_view text) {
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
    return std::string(text.substr(b, e - b));
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string line(text.substr(start, nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = nl + 1;
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

} // namespace kgdx
