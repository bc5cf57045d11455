#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cilbench {

// Ordered, timestamp-free record stream. One JSON object per line with a
// mandatory "event" field; object keys serialize sorted, so logs from equal
// runs compare byte-for-byte.
class EventLog {
public:
    void emit(nlohmann::json record) {
        lines_.push_back(record.dump());
        if (sink_) sink_(lines_.back());
    }

    const std::vector<std::string>& lines() const { return lines_; }

    std::string text() const {
        std::string out;
        for (const auto& l : lines_) {
            out += l;
            out += '\n';
        }
        return out;
    }

    // Optional tee (e.g. straight to the run directory's events.log).
    void set_sink(std::function<void(const std::string&)> sink) { sink_ = std::move(sink); }

private:
    std::vector<std::string> lines_;
    std::function<void(const std::string&)> sink_;
};

}  // namespace cilbench
