#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rssm/io.hpp"

namespace rssm {

namespace fs = std::filesystem;

fs::path latest_checkpoint(const fs::path& out) {
  fs::path best;
  if (!fs::is_directory(out)) return best;
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string n = e.path().filename().string();
    if (e.is_directory() && n.rfind("ckpt-", 0) == 0 && n.find('.') == std::string::npos &&
        fs::exists(e.path() / "manifest.json") && (best.empty() || n > best.filename().string()))
      best = e.path();
  }
  return best;
}

namespace {

std::string ckpt_name(std::size_t step) {
  std::ostringstream os;
  os << "ckpt-" << std::setw(7) << std::setfill('0') << step;
  return os.str();
}

// Drops log lines past `step` (left behind by an interrupted run); returns the
// wall time recorded on the last kept line.
double trim_log(const fs::path& log, std::size_t step) {
  std::ifstream in(log);
  std::vector<std::string> kept;
  double wall = 0.0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream is(line);
    std::size_t s = 0;
    if (!(is >> s) || s > step) break;
    std::vector<double> cols;
    for (double v; is >> v;) cols.push_back(v);
    if (!cols.empty()) wall = cols.back();
    kept.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
  return wall;
}

}  // namespace

TrainRunResult run_training(RssmModel& model, std::uint64_t model_seed, const std::vector<Episode>& data,
                            const TrainConfig& cfg, std::uint64_t seed, const TrainRunOptions& opt) {
  fs::create_directories(opt.out);
  const fs::path log_path = opt.out / "train.log";
  Trainer trainer(model, data, cfg, seed);
  TrainRunResult res;
  double wall0 = 0.0;
  if (opt.resume) {
    res.last_checkpoint = latest_checkpoint(opt.out);
    if (res.last_checkpoint.empty()) throw FormatError("resume: no checkpoint in '" + opt.out.string() + "'");
    const Checkpoint ck = read_checkpoint(res.last_checkpoint);
    auto restored = model_from_checkpoint(ck);
    if (restored->params.names() != model.params.names())
      throw FormatError("resume: checkpoint parameters do not match the configured model");
    for (std::size_t i = 0; i < model.params.size(); ++i) model.params.value(i) = restored->params.value(i);
    restore_trainer(ck, trainer);
    wall0 = trim_log(log_path, ck.step);
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }

  std::ofstream log(log_path, std::ios::app);
  log << std::setprecision(10);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto save = [&] {
    res.last_checkpoint = opt.out / ckpt_name(trainer.steps_done());
    write_checkpoint(res.last_checkpoint, make_checkpoint(model, model_seed, cfg, &trainer));
  };

  while (trainer.steps_done() < cfg.steps) {
    if (opt.time_budget > 0 && elapsed() > opt.time_budget) break;
    const StepStats st = trainer.step();
    res.stats.push_back(st);
    log << st.step << '\t' << st.bound << '\t' << st.l1 << '\t' << st.l2 << '\t' << st.kl << '\t' << st.lr << '\t'
        << wall0 + elapsed() << '\n';
    log.flush();
    if (opt.progress && (st.step % opt.progress_every == 0 || st.step == cfg.steps))
      *opt.progress << "step " << st.step << "  bound " << st.bound << "  kl " << st.kl << "  lr " << st.lr << "  "
                    << st.seconds << " s/step" << std::endl;
    if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) save();
  }
  res.steps_done = trainer.steps_done();
  res.finished = res.steps_done >= cfg.steps;
  if (res.last_checkpoint.empty() || res.last_checkpoint.filename() != ckpt_name(res.steps_done)) save();
  return res;
}

}  // namespace rssm
