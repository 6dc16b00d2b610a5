#pragma once

#include "blobforge/session/session.hpp"

#include <condition_variable>
#include <mutex>
#include <thread>

namespace bf {

/// Thread-safe front of a Session. Runs at most one background job (drag_run,
/// refine_run, transition_stage2); frames render from the last published
/// snapshot and never wait for the writer.
class SessionService {
public:
    explicit SessionService(SessionConfig cfg = {}, std::string id = "session");
    ~SessionService();
    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    void set_provider(std::shared_ptr<GuidanceProvider> p);

    /// Receives server pushes (metrics, job_status) as protocol messages.
    using Listener = std::function<void(const nlohmann::json&)>;
    int add_listener(Listener l);
    void remove_listener(int handle);

    /// Applies a command. Job commands return at once with {"job": name} and
    /// continue in the background; while a job runs, only its control
    /// commands (step_params, drag_end, refine_end, cancel) and queries are
    /// accepted, everything else fails with `busy`.
    CommandResult submit(const nlohmann::json& command);
    /// Blocks until no job is running; returns the last job's final result.
    CommandResult wait_idle();
    [[nodiscard]] bool job_running() const { return running_.load(); }

    [[nodiscard]] std::shared_ptr<const FrameSource> frame_source() const;
    [[nodiscard]] Frame render(const Camera& camera) const { return frame_source()->render(camera); }

    /// Runs fn with exclusive access to the session (waits for the current step).
    template <typename Fn> auto with_session(Fn&& fn) {
        std::lock_guard lock(mu_);
        return fn(session_);
    }
    [[nodiscard]] const std::string& id() const { return id_; }

    static bool is_job_command(const std::string& name);

private:
    CommandResult apply_locked(const nlohmann::json& command);
    void publish(bool force);
    void push(const nlohmann::json& msg);
    void start_job(const std::string& name, const nlohmann::json& command);
    void stop_job();
    void job_main(std::string name, nlohmann::json command);

    std::string id_;
    mutable std::mutex mu_; ///< guards session_
    Session session_;

    mutable std::mutex pub_mu_;
    std::shared_ptr<const FrameSource> published_;
    std::chrono::steady_clock::time_point last_publish_{};

    std::mutex listeners_mu_;
    std::map<int, Listener> listeners_;
    int next_listener_ = 1;

    std::mutex job_mu_; ///< guards job_, job_name_, last_job_
    std::condition_variable job_cv_;
    std::thread job_;
    std::string job_name_;
    std::atomic<bool> running_{false};
    std::atomic<bool> cancel_{false};
    CommandResult last_job_;
};

} // namespace bf
