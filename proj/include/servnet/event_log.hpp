#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "servnet/ids.hpp"

namespace servnet {

using Json = nlohmann::json;

struct Event {
    Tick tick = 0;
    std::uint64_t seq = 0;
    std::string actor;
    std::string kind;
    Json payload = Json::object();

    /// One JSON Lines record; payload keys come out sorted.
    std::string to_jsonl() const {
        nlohmann::ordered_json line;
        line["tick"] = tick;
        line["seq"] = seq;
        line["actor"] = actor;
        line["kind"] = kind;
        line["payload"] = payload;
        return line.dump();
    }

    static Event from_jsonl(const std::string& text) {
        const Json j = Json::parse(text);
        Event e;
        e.tick = j.at("tick").get<Tick>();
        e.seq = j.at("seq").get<std::uint64_t>();
        e.actor = j.at("actor").get<std::string>();
        e.kind = j.at("kind").get<std::string>();
        e.payload = j.at("payload");
        return e;
    }
};

/// Append-only, totally ordered by (tick, seq).
class EventLog {
public:
    const Event& append(Tick tick, std::string actor, std::string kind, Json payload = Json::object()) {
        events_.push_back(Event{tick, events_.size(), std::move(actor), std::move(kind), std::move(payload)});
        return events_.back();
    }

    const std::vector<Event>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }

    std::size_t count(const std::string& kind) const {
        std::size_t n = 0;
        for (const auto& e : events_) n += e.kind == kind ? 1 : 0;
        return n;
    }

    std::vector<const Event*> of_kind(const std::string& kind) const {
        std::vector<const Event*> out;
        for (const auto& e : events_) {
            if (e.kind == kind) out.push_back(&e);
        }
        return out;
    }

    std::string to_jsonl() const {
        std::string out;
        for (const auto& e : events_) {
            out += e.to_jsonl();
            out += '\n';
        }
        return out;
    }

    static EventLog from_jsonl(std::istream& in) {
        EventLog log;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            log.events_.push_back(Event::from_jsonl(line));
        }
        return log;
    }

private:
    std::vector<Event> events_;
};

}  // namespace servnet
