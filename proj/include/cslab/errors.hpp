#pragma once

#include <stdexcept>
#include <string>

namespace cslab {

struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct domain_error : std::runtime_error {
    explicit domain_error(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// Violated caller contract (bad arguments, degenerate batch, label out of range).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct attack_error : std::runtime_error {
    explicit attack_error(const std::string& msg) : std::runtime_error("attack error: " + msg) {}
};

struct generation_error : std::runtime_error {
    explicit generation_error(const std::string& msg) : std::runtime_error("generation error: " + msg) {}
};

struct undefined_metric_error : std::runtime_error {
    explicit undefined_metric_error(const std::string& msg)
        : std::runtime_error("undefined metric: " + msg) {}
};

} // namespace cslab
