#include "blobforge/session/service.hpp"

#include "blobforge/session/protocol.hpp"

#include <fmt/core.h>

namespace bf {

using nlohmann::json;

namespace {

const char* kJobs[] = {"drag_run", "refine_run", "transition_stage2"};

std::string cmd_name(const json& c) {
    return c.is_object() && c.contains("cmd") && c.at("cmd").is_string() ? c.at("cmd").get<std::string>() : "";
}

CommandResult failure(ErrorCode code, std::string message, std::uint64_t generation) {
    CommandResult r;
    r.code = code;
    r.message = std::move(message);
    r.generation = generation;
    return r;
}

} // namespace

bool SessionService::is_job_command(const std::string& name) {
    for (const char* j : kJobs)
        if (name == j) return true;
    return false;
}

SessionService::SessionService(SessionConfig cfg, std::string id) : id_(id), session_(std::move(cfg), std::move(id)) {
    session_.set_cancel_flag(&cancel_);
    session_.set_metrics_sink([this](const json& m) { push(make_metrics(m)); });
    std::lock_guard lock(mu_);
    publish(true);
}

SessionService::~SessionService() { stop_job(); }

void SessionService::set_provider(std::shared_ptr<GuidanceProvider> p) {
    std::lock_guard lock(mu_);
    session_.set_provider(std::move(p));
}

int SessionService::add_listener(Listener l) {
    std::lock_guard lock(listeners_mu_);
    listeners_[next_listener_] = std::move(l);
    return next_listener_++;
}

void SessionService::remove_listener(int handle) {
    std::lock_guard lock(listeners_mu_);
    listeners_.erase(handle);
}

void SessionService::push(const json& msg) {
    std::vector<Listener> ls;
    {
        std::lock_guard lock(listeners_mu_);
        for (const auto& [h, l] : listeners_) ls.push_back(l);
    }
    for (const auto& l : ls) l(msg);
}

std::shared_ptr<const FrameSource> SessionService::frame_source() const {
    std::lock_guard lock(pub_mu_);
    return published_;
}

// Caller holds mu_.
void SessionService::publish(bool force) {
    const auto now = std::chrono::steady_clock::now();
    {
        std::lock_guard lock(pub_mu_);
        // Stage II sources copy the refined field; rate-limit them during jobs.
        if (!force && published_ && session_.stage() == Stage::StageII &&
            now - last_publish_ < std::chrono::milliseconds(250))
            return;
    }
    auto src = std::make_shared<const FrameSource>(session_.frame_source());
    std::lock_guard lock(pub_mu_);
    published_ = std::move(src);
    last_publish_ = now;
}

CommandResult SessionService::apply_locked(const json& command) {
    std::lock_guard lock(mu_);
    CommandResult r = session_.apply(command);
    if (r.ok() && !is_query_command(cmd_name(command))) publish(true);
    return r;
}

CommandResult SessionService::submit(const json& command) {
    const std::string name = cmd_name(command);
    if (name == "cancel") {
        std::string job;
        {
            std::lock_guard lock(job_mu_);
            job = running_ ? job_name_ : "";
        }
        stop_job();
        CommandResult r;
        r.data = {{"cancelled", job}};
        r.generation = frame_source()->generation;
        return r;
    }
    if (running_) {
        std::string job;
        {
            std::lock_guard lock(job_mu_);
            job = job_name_;
        }
        if (is_query_command(name)) {
            std::unique_lock lock(mu_, std::try_to_lock);
            if (!lock.owns_lock()) {
                CommandResult r;
                r.data = {{"session", id_}, {"stage", to_string(frame_source()->stage)}, {"job", job}, {"busy", true}};
                r.generation = frame_source()->generation;
                return r;
            }
            return session_.apply(command);
        }
        if (job == "drag_run" && name == "step_params") return apply_locked(command);
        if ((job == "drag_run" && name == "drag_end") || (job == "refine_run" && name == "refine_end")) {
            stop_job();
            return apply_locked(command);
        }
        return failure(ErrorCode::busy, fmt::format("'{}' rejected: job '{}' is running", name, job),
                       frame_source()->generation);
    }
    if (!is_job_command(name)) return apply_locked(command);

    // Check job preconditions up front so obvious mistakes fail synchronously.
    {
        std::lock_guard lock(mu_);
        const std::uint64_t g = session_.generation();
        if (name == "drag_run" && !session_.drag_active())
            return failure(ErrorCode::not_found, "no active drag", g);
        if (name == "refine_run" && session_.active_refinements().empty())
            return failure(ErrorCode::not_found, "no active refinement", g);
        if (name == "transition_stage2") {
            if (session_.stage() != Stage::StageI)
                return failure(ErrorCode::stage_mismatch,
                               fmt::format("'transition_stage2' needs stage1 but the session is in {}",
                                           to_string(session_.stage())),
                               g);
            if (command.value("steps", session_.config().distill.steps) <= 0)
                return failure(ErrorCode::invalid_argument, "distillation needs steps > 0", g);
        }
    }
    start_job(name, command);
    CommandResult r;
    r.data = {{"job", name}, {"state", "started"}};
    r.generation = frame_source()->generation;
    return r;
}

void SessionService::start_job(const std::string& name, const json& command) {
    std::lock_guard lock(job_mu_);
    if (job_.joinable()) job_.join();
    cancel_ = false;
    running_ = true;
    job_name_ = name;
    last_job_ = {};
    job_ = std::thread(&SessionService::job_main, this, name, command);
}

void SessionService::stop_job() {
    cancel_ = true;
    std::unique_lock lock(job_mu_);
    job_cv_.wait(lock, [&] { return !running_; });
    if (job_.joinable()) job_.join();
    cancel_ = false;
}

CommandResult SessionService::wait_idle() {
    std::unique_lock lock(job_mu_);
    job_cv_.wait(lock, [&] { return !running_; });
    if (job_.joinable()) job_.join();
    return last_job_;
}

void SessionService::job_main(std::string name, json command) {
    push(make_job_status(name, "running"));
    CommandResult result;
    std::string state = "finished";
    try {
        if (name == "transition_stage2") {
            {
                // Readers keep seeing the frozen Stage I scene while distilling.
                auto src = std::make_shared<FrameSource>(*frame_source());
                src->stage = Stage::Distilling;
                std::lock_guard lock(pub_mu_);
                published_ = std::move(src);
            }
            result = apply_locked(command);
            if (!result.ok()) {
                state = result.code == ErrorCode::cancelled ? "cancelled" : "failed";
                std::lock_guard lock(mu_);
                publish(true);
            }
        } else if (name == "drag_run") {
            const auto max_steps = command.value("max_steps", std::numeric_limits<std::size_t>::max());
            json step_cmd = {{"cmd", "drag_step"}, {"steps", 1}};
            std::size_t n = 0;
            for (; n < max_steps; ++n) {
                if (cancel_) {
                    state = "cancelled";
                    break;
                }
                std::lock_guard lock(mu_);
                if (!session_.drag_active()) break;
                if (session_.drag()->converged()) {
                    state = "converged";
                    break;
                }
                result = session_.apply(step_cmd);
                publish(false);
                if (!result.ok()) {
                    state = "failed";
                    break;
                }
                if (result.data.value("converged", false)) {
                    state = "converged";
                    ++n;
                    break;
                }
            }
            result.data["steps_run"] = n;
        } else if (name == "refine_run") {
            const int steps = command.value("steps", 1);
            json step_cmd = {{"cmd", "refine_step"}, {"steps", 1}};
            if (command.contains("overlay")) step_cmd["overlay"] = command.at("overlay");
            int n = 0;
            for (; n < steps; ++n) {
                if (cancel_) {
                    state = "cancelled";
                    break;
                }
                std::lock_guard lock(mu_);
                if (session_.active_refinements().empty()) break;
                result = session_.apply(step_cmd);
                publish(false);
                if (!result.ok()) {
                    state = "failed";
                    break;
                }
            }
            {
                std::lock_guard lock(mu_);
                publish(true);
            }
            result.data["steps_run"] = n;
        }
    } catch (const std::exception& e) {
        result.code = ErrorCode::internal;
        result.message = e.what();
        state = "failed";
    }
    push(make_job_status(name, state, result.to_json()));
    std::lock_guard lock(job_mu_);
    last_job_ = result;
    running_ = false;
    job_cv_.notify_all();
}

} // namespace bf
