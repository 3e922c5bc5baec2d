#pragma once

// Pluggable text generation: prompt in, completion out.

#include <functional>
#include <mutex>
#include <string>

namespace counsel {

class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    /// Throws Error(GeneratorUnavailable) when no completion can be produced.
    virtual std::string generate(const std::string& prompt) = 0;
    virtual std::string name() const = 0;
};

/// Wraps a callable; used by tests and embedding code.
class CallbackGenerator : public TextGenerator {
public:
    using Fn = std::function<std::string(const std::string&)>;
    CallbackGenerator(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

    std::string generate(const std::string& prompt) override { return fn_(prompt); }
    std::string name() const override { return name_; }

private:
    std::string name_;
    Fn fn_;
};

struct HttpGeneratorConfig {
    /// e.g. http://127.0.0.1:11434 ; plain http only.
    std::string base_url;
    std::string model;
    std::string path = "/v1/chat/completions";
    int timeout_s = 60;
    std::size_t max_chars = 20000;
    /// Bearer token, usually read from the environment by the caller.
    std::string api_key;

    bool configured() const { return !base_url.empty() && !model.empty(); }
};

/// OpenAI-compatible chat-completions client. Calls are serialized.
class HttpTextGenerator : public TextGenerator {
public:
    explicit HttpTextGenerator(HttpGeneratorConfig config);

    std::string generate(const std::string& prompt) override;
    std::string name() const override { return "http:" + config_.model; }

private:
    HttpGeneratorConfig config_;
    std::mutex mu_;
};

}  // namespace counsel
