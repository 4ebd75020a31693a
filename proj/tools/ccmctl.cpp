#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ccm/control.hpp"
#include "ccm/observer.hpp"
#include "ccm/sim.hpp"
#include "ccm/synthesis.hpp"

namespace fs = std::filesystem;

namespace {

struct RunConfig {
    std::string model = "moore-greitzer";
    std::string model_file;
    std::string cert_file;
    std::string config_file;
    std::string out_root;
    double radius = 1.0;
    std::vector<double> radii;
    double lambda = 0.5;
    double alpha_min = 0.02;
    double alpha_max = 50.0;
    int grid_points = 0;  // 0: per-task default
    int w_degree = 0;
    int y_degree = 2;
    uint64_t seed = 1;
    double sigma = 0.2;
    double t_end = 10.0;
    double step = 1e-3;
    int refine = 2;
    std::string controller = "path-integral";
    std::vector<double> from_pt, to_pt, x0;
    double m21 = -2.0, m22 = 1.0;
};

uint64_t config_hash(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad config line: " + line);
        std::string key = line.substr(first, eq - first);
        key.erase(key.find_last_not_of(" \t") + 1);
        std::string val = line.substr(eq + 1);
        val.erase(0, val.find_first_not_of(" \t"));
        val.erase(val.find_last_not_of(" \t\r") + 1);
        kv[key] = val;
    }
    return kv;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

// File values fill in only options the user did not pass on the command line.
void apply_config_file(CLI::App& app, RunConfig& cfg) {
    if (cfg.config_file.empty()) return;
    auto kv = read_kv_file(cfg.config_file);
    auto unset = [&](const std::string& flag) {
        auto* opt = app.get_option_no_throw(flag);
        return opt != nullptr && opt->count() == 0;
    };
    for (const auto& [key, val] : kv) {
        std::string flag = "--" + key;
        if (!unset(flag)) continue;
        if (key == "model") cfg.model = val;
        else if (key == "model-file") cfg.model_file = val;
        else if (key == "cert") cfg.cert_file = val;
        else if (key == "out-root") cfg.out_root = val;
        else if (key == "radius") cfg.radius = std::stod(val);
        else if (key == "radii") cfg.radii = parse_list(val);
        else if (key == "lambda") cfg.lambda = std::stod(val);
        else if (key == "alpha-min") cfg.alpha_min = std::stod(val);
        else if (key == "alpha-max") cfg.alpha_max = std::stod(val);
        else if (key == "grid-points") cfg.grid_points = std::stoi(val);
        else if (key == "w-degree") cfg.w_degree = std::stoi(val);
        else if (key == "y-degree") cfg.y_degree = std::stoi(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "sigma") cfg.sigma = std::stod(val);
        else if (key == "t-end") cfg.t_end = std::stod(val);
        else if (key == "step") cfg.step = std::stod(val);
        else if (key == "refine") cfg.refine = std::stoi(val);
        else if (key == "controller") cfg.controller = val;
        else if (key == "from") cfg.from_pt = parse_list(val);
        else if (key == "to") cfg.to_pt = parse_list(val);
        else if (key == "x0") cfg.x0 = parse_list(val);
        else if (key == "m21") cfg.m21 = std::stod(val);
        else if (key == "m22") cfg.m22 = std::stod(val);
        else throw std::runtime_error("unknown config key: " + key);
    }
}

void validate(const RunConfig& cfg) {
    ccm::require(cfg.radius > 0.0, "radius must be positive");
    ccm::require(cfg.lambda > 0.0, "lambda must be positive");
    ccm::require(cfg.alpha_min > 0.0 && cfg.alpha_max > cfg.alpha_min,
                 "alpha bounds must satisfy 0 < alpha-min < alpha-max");
    ccm::require(cfg.step > 0.0 && cfg.t_end > 0.0, "step and t-end must be positive");
    ccm::require(cfg.refine >= 2, "refine must be >= 2");
    ccm::require(cfg.sigma >= 0.0, "sigma must be non-negative");
    for (double r : cfg.radii) ccm::require(r > 0.0, "radii entries must be positive");
}

fs::path make_run_dir(const RunConfig& cfg, const std::string& subcmd,
                      const std::string& config_echo) {
    fs::path root = cfg.out_root.empty()
                        ? (std::getenv("CCMCTL_OUT_ROOT") ? fs::path(std::getenv("CCMCTL_OUT_ROOT"))
                                                          : fs::path("runs"))
                        : fs::path(cfg.out_root);
    auto now = std::chrono::system_clock::now().time_since_epoch();
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(now).count();
    char name[128];
    std::snprintf(name, sizeof name, "%s-%lld-%016llx", subcmd.c_str(), (long long)us,
                  (unsigned long long)config_hash(config_echo));
    fs::path dir = root / name;
    fs::create_directories(dir);
    return dir;
}

std::string echo_config(const RunConfig& c, const std::string& subcmd) {
    std::ostringstream e;
    e << "subcommand = " << subcmd << "\n";
    e << "model = " << c.model << "\n";
    if (!c.model_file.empty()) e << "model-file = " << c.model_file << "\n";
    if (!c.cert_file.empty()) e << "cert = " << c.cert_file << "\n";
    e << "radius = " << fmt_num(c.radius) << "\n";
    if (!c.radii.empty()) {
        e << "radii =";
        for (double r : c.radii) e << " " << fmt_num(r);
        e << "\n";
    }
    e << "lambda = " << fmt_num(c.lambda) << "\n";
    e << "alpha-min = " << fmt_num(c.alpha_min) << "\n";
    e << "alpha-max = " << fmt_num(c.alpha_max) << "\n";
    e << "grid-points = " << c.grid_points << "\n";
    e << "w-degree = " << c.w_degree << "\n";
    e << "y-degree = " << c.y_degree << "\n";
    e << "seed = " << c.seed << "\n";
    e << "sigma = " << fmt_num(c.sigma) << "\n";
    e << "t-end = " << fmt_num(c.t_end) << "\n";
    e << "step = " << fmt_num(c.step) << "\n";
    e << "refine = " << c.refine << "\n";
    e << "controller = " << c.controller << "\n";
    e << "m21 = " << fmt_num(c.m21) << "\n";
    e << "m22 = " << fmt_num(c.m22) << "\n";
    return e.str();
}

void write_manifest(const fs::path& dir, const std::string& config_echo, double wall_seconds,
                    const std::map<std::string, std::string>& extra) {
    std::ofstream out(dir / "manifest.txt");
    out << "[config]\n" << config_echo << "\n[run]\n";
    out << "wall_seconds = " << fmt_num(wall_seconds) << "\n";
    for (const auto& [k, v] : extra) out << k << " = " << v << "\n";
}

ccm::ControlAffineSystem load_model(const RunConfig& cfg) {
    if (!cfg.model_file.empty()) return ccm::load_model_file(cfg.model_file);
    return ccm::builtin(cfg.model);
}

ccm::Region mg_region(double radius, double u_half = 2.0, double w_half = 2.0) {
    ccm::Region region = ccm::Region::box(Eigen::Vector2d(0, 0), Eigen::Vector2d(radius, radius));
    region.u_lo = ccm::VectorXd::Constant(1, -u_half);
    region.u_hi = ccm::VectorXd::Constant(1, u_half);
    region.w_lo = ccm::VectorXd::Constant(1, -w_half);
    region.w_hi = ccm::VectorXd::Constant(1, w_half);
    return region;
}

std::string report_text(const ccm::VerificationReport& rep) {
    std::ostringstream out;
    out << "pass = " << (rep.pass ? "true" : "false") << "\n";
    out << "worst_margin = " << fmt_num(rep.worst_margin) << "\n";
    out << "grid_size = " << rep.grid_size << "\n";
    if (rep.worst_x.size()) {
        out << "worst_x =";
        for (int i = 0; i < rep.worst_x.size(); ++i) out << " " << fmt_num(rep.worst_x(i));
        out << "\n";
    }
    return out.str();
}

int cmd_synth(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    ccm::Region region = mg_region(cfg.radius);
    if (sys.n() != 2) region = ccm::Region::box(ccm::VectorXd::Zero(sys.n()),
                                                ccm::VectorXd::Constant(sys.n(), cfg.radius));
    ccm::SynthesisOpts opts;
    opts.degrees.w_degree = cfg.w_degree;
    opts.degrees.y_degree = cfg.y_degree;
    opts.grid.state_points = cfg.grid_points > 0 ? cfg.grid_points : 9;
    opts.reverify_factor = cfg.refine;
    auto t0 = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "synth");
    fs::path dir = make_run_dir(cfg, "synth", config_echo);
    std::map<std::string, std::string> extra;
    int code = 0;
    try {
        auto cert = ccm::synthesize_ccm(sys, region, cfg.lambda, opts);
        std::string text = ccm::write_certificate(cert);
        std::ofstream(dir / "certificate.txt") << text;
        extra["certificate_hash"] = fmt_num(double(config_hash(text)));
        auto rep = ccm::verify_certificate(cert, sys, cfg.refine);
        std::ofstream(dir / "verification.txt") << report_text(rep);
        std::cout << "certificate written to " << (dir / "certificate.txt").string() << "\n"
                  << report_text(rep);
        if (!rep.pass) code = 2;
    } catch (const ccm::SynthesisError& e) {
        std::ofstream(dir / "verification.txt") << "pass = false\nerror = " << e.what() << "\n";
        std::cerr << "synthesis failed: " << e.what() << "\n";
        code = 2;
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(dir, config_echo, wall, extra);
    return code;
}

int cmd_robust(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    ccm::require(sys.n() == 2 && sys.p_w() == 1,
                 "robust: this workflow expects a two-state single-disturbance model");
    Eigen::MatrixXd C(1, 2), D(1, 1);
    C << 0.0, 1.0;
    D << 0.1;
    std::vector<double> radii = cfg.radii.empty() ? std::vector<double>{cfg.radius} : cfg.radii;
    auto t0 = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "robust");
    fs::path dir = make_run_dir(cfg, "robust", config_echo);
    std::ofstream table(dir / "gain_table.csv");
    table << "r,alpha\n";
    std::map<std::string, std::string> extra;
    int code = 0;
    for (double r : radii) {
        ccm::RobustOpts opts;
        opts.degrees.w_degree = cfg.w_degree;
        opts.degrees.y_degree = cfg.y_degree;
        opts.grid.state_points = cfg.grid_points > 0 ? cfg.grid_points : 11;
        opts.alpha_lo = cfg.alpha_min;
        opts.alpha_hi = cfg.alpha_max;
        opts.reverify_factor = cfg.refine;
        try {
            auto cert = ccm::synthesize_robust(sys, C, D, mg_region(r), cfg.lambda, opts);
            table << fmt_num(r) << "," << fmt_num(cert.alpha) << "\n";
            std::cout << "r=" << fmt_num(r) << " alpha=" << fmt_num(cert.alpha) << "\n";
            std::string text = ccm::write_certificate(cert);
            char name[64];
            std::snprintf(name, sizeof name, "certificate_r%g.txt", r);
            std::ofstream(dir / name) << text;
            extra[std::string("certificate_hash_r") + fmt_num(r)] =
                fmt_num(double(config_hash(text)));
        } catch (const ccm::SynthesisError& e) {
            table << fmt_num(r) << ",infeasible\n";
            std::cerr << "r=" << fmt_num(r) << " infeasible: " << e.what() << "\n";
            code = 2;
        }
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(dir, config_echo, wall, extra);
    return code;
}

ccm::LoadedCertificate load_cert(const RunConfig& cfg, const ccm::ControlAffineSystem& sys) {
    std::ifstream in(cfg.cert_file);
    if (!in) throw std::runtime_error("cannot open certificate file: " + cfg.cert_file);
    std::stringstream ss;
    ss << in.rdbuf();
    return ccm::parse_certificate(ss.str(), sys.variables());
}

int cmd_geodesic(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    ccm::require(int(cfg.from_pt.size()) == sys.n() && int(cfg.to_pt.size()) == sys.n(),
                 "geodesic: --from and --to must have one value per state");
    auto loaded = load_cert(cfg, sys);
    const ccm::PolyMatrix& W = loaded.robust ? loaded.rob.W : loaded.ccm.W;
    ccm::MetricField metric;
    metric.M = [&](const ccm::VectorXd& x) {
        auto vals = sys.pack(x, ccm::VectorXd::Zero(sys.m()), ccm::VectorXd::Zero(sys.p_w()));
        return Eigen::MatrixXd(W.eval(vals).inverse());
    };
    ccm::VectorXd a = Eigen::Map<const ccm::VectorXd>(cfg.from_pt.data(), sys.n());
    ccm::VectorXd b = Eigen::Map<const ccm::VectorXd>(cfg.to_pt.data(), sys.n());
    auto t0 = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "geodesic");
    fs::path dir = make_run_dir(cfg, "geodesic", config_echo);
    auto geo = ccm::compute_geodesic(metric, a, b);
    std::ofstream out(dir / "path.csv");
    ccm::write_path_csv(geo.path.nodes, out);
    std::cout << "energy = " << fmt_num(geo.energy) << "\nlength = " << fmt_num(geo.length)
              << "\nconverged = " << (geo.converged ? "true" : "false") << "\n";
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(dir, config_echo, wall, {{"energy", fmt_num(geo.energy)}});
    return geo.converged ? 0 : 2;
}

int cmd_simulate(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    auto loaded = load_cert(cfg, sys);
    const ccm::PolyMatrix& W = loaded.robust ? loaded.rob.W : loaded.ccm.W;
    const ccm::PolyMatrix& Y = loaded.robust ? loaded.rob.Y : loaded.ccm.Y;
    double lambda = loaded.robust ? loaded.rob.lambda_min : loaded.ccm.lambda;

    ccm::VectorXd x0 = ccm::VectorXd::Constant(sys.n(), 1.0);
    if (!cfg.x0.empty()) {
        ccm::require(int(cfg.x0.size()) == sys.n(), "simulate: --x0 must have one value per state");
        x0 = Eigen::Map<const ccm::VectorXd>(cfg.x0.data(), sys.n());
    }
    ccm::ReferenceSignal ref;
    ref.x = [&](double) { return ccm::VectorXd::Zero(sys.n()); };
    ref.u = [&](double) { return ccm::VectorXd::Zero(sys.m()); };

    ccm::ControllerFn controller;
    ccm::PathIntegralController pic(sys, W, Y);
    ccm::MetricField metric = pic.metric();
    if (cfg.controller == "path-integral") {
        controller = [&](double, const ccm::VectorXd& x, const ccm::VectorXd& xs,
                         const ccm::VectorXd& us) { return pic.compute(xs, us, x); };
    } else if (cfg.controller == "clf") {
        controller = [&, lambda](double, const ccm::VectorXd& x, const ccm::VectorXd& xs,
                                 const ccm::VectorXd& us) {
            ccm::VectorXd xs_dot = sys.eval_dynamics(xs, us);
            auto geo = ccm::compute_geodesic(metric, xs, x);
            return ccm::VectorXd(us + ccm::clf_control(sys, metric, geo, x, xs, xs_dot, us, lambda));
        };
    } else {
        throw std::runtime_error("simulate: unknown controller: " + cfg.controller);
    }

    auto t0c = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "simulate");
    fs::path dir = make_run_dir(cfg, "simulate", config_echo);
    auto traj = ccm::closed_loop(sys, controller, ref, nullptr, x0, 0.0, cfg.t_end, cfg.step);
    std::ofstream out(dir / "trajectory.csv");
    ccm::write_trajectory_csv(traj, out);
    std::vector<double> err;
    for (size_t k = 0; k < traj.t.size(); ++k) err.push_back((traj.x[k] - traj.x_ref[k]).norm());
    double rate = ccm::fit_decay_rate(traj.t, err, 0.5, cfg.t_end);
    std::cout << "fitted decay rate = " << fmt_num(rate) << "\n";
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0c).count();
    write_manifest(dir, config_echo, wall, {{"decay_rate", fmt_num(rate)}});
    return 0;
}

int cmd_observe(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    ccm::require(sys.n() == 2, "observe: this workflow expects the two-state surge model");
    ccm::ReducedObserverDesign design;
    design.p = 1;
    design.M21 = ccm::MatrixXd::Constant(1, 1, cfg.m21);
    design.M22 = ccm::MatrixXd::Constant(1, 1, cfg.m22);
    design.lambda = cfg.lambda;
    design.region = ccm::Region::box(Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 2));

    auto grid = design.region.state_grid(41);
    auto check = ccm::check_m22_condition(sys, design, grid);
    if (!check.pass) {
        std::cerr << "observer design fails the reduced condition:\n" << report_text(check);
        return 2;
    }

    // Truth: unforced plant from (0.1, 0.1); measurement y = psi + noise.
    ccm::VectorXd xt0(2);
    xt0 << 0.1, 0.1;
    auto truth = ccm::integrate(
        [&](double t, const ccm::VectorXd& x) {
            return sys.eval_dynamics(x, ccm::VectorXd::Zero(sys.m()), t);
        },
        xt0, 0.0, cfg.t_end, cfg.step);
    ccm::NoiseStream noise{cfg.seed, cfg.sigma};
    auto y_signal = [&](double t) {
        long k = std::lround((t - truth.t.front()) / cfg.step);
        k = std::min(std::max(k, 0L), long(truth.t.size() - 1));
        ccm::VectorXd y(1);
        y << truth.x[size_t(k)](0) + (cfg.sigma > 0 ? noise.gaussian(uint64_t(k)) : 0.0);
        return y;
    };
    ccm::VectorXd xhat0(2);
    xhat0 << 0.1, 2.1;

    auto t0c = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "observe");
    fs::path dir = make_run_dir(cfg, "observe", config_echo);
    auto est = ccm::simulate_observer(sys, design, y_signal, xhat0, 0.0, cfg.t_end, cfg.step);
    std::ofstream out(dir / "estimates.csv");
    out << "t,y,xhat1,xhat2,x1,x2\n";
    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << "," << buf;
    };
    for (size_t k = 0; k < est.t.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", est.t[k]);
        out << buf;
        put(y_signal(est.t[k])(0));
        put(est.xhat[k](0));
        put(est.xhat[k](1));
        put(truth.x[std::min(k, truth.x.size() - 1)](0));
        put(truth.x[std::min(k, truth.x.size() - 1)](1));
        out << "\n";
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0c).count();
    write_manifest(dir, config_echo, wall, {});
    std::cout << "estimates written to " << (dir / "estimates.csv").string() << "\n";
    return 0;
}

int cmd_verify(const RunConfig& cfg) {
    auto sys = load_model(cfg);
    auto loaded = load_cert(cfg, sys);
    auto t0c = std::chrono::steady_clock::now();
    std::string config_echo = echo_config(cfg, "verify");
    fs::path dir = make_run_dir(cfg, "verify", config_echo);
    ccm::VerificationReport rep = loaded.robust ? ccm::verify_certificate(loaded.rob, sys, cfg.refine)
                                                : ccm::verify_certificate(loaded.ccm, sys, cfg.refine);
    std::ofstream(dir / "verification.txt") << report_text(rep);
    std::cout << report_text(rep);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0c).count();
    write_manifest(dir, config_echo, wall, {});
    return rep.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contraction-metric synthesis, verification, control, and simulation"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--model", cfg.model, "builtin model name");
        sub->add_option("--model-file", cfg.model_file, "model definition file");
        sub->add_option("--cert", cfg.cert_file, "certificate file");
        sub->add_option("--config", cfg.config_file, "key=value config file (flags override)");
        sub->add_option("--out-root", cfg.out_root, "output root directory");
        sub->add_option("--radius", cfg.radius, "region half-width");
        sub->add_option("--radii", cfg.radii, "comma-separated radius sweep")->delimiter(',');
        sub->add_option("--lambda", cfg.lambda, "contraction rate");
        sub->add_option("--alpha-min", cfg.alpha_min, "gain search lower bound");
        sub->add_option("--alpha-max", cfg.alpha_max, "gain search upper bound");
        sub->add_option("--grid-points", cfg.grid_points, "grid points per state dimension");
        sub->add_option("--w-degree", cfg.w_degree, "metric polynomial degree");
        sub->add_option("--y-degree", cfg.y_degree, "gain polynomial degree");
        sub->add_option("--seed", cfg.seed, "noise seed");
        sub->add_option("--sigma", cfg.sigma, "measurement noise standard deviation");
        sub->add_option("--t-end", cfg.t_end, "simulation horizon");
        sub->add_option("--step", cfg.step, "integration step");
        sub->add_option("--refine", cfg.refine, "verification refinement factor");
        sub->add_option("--controller", cfg.controller, "path-integral | clf");
        sub->add_option("--from", cfg.from_pt, "geodesic start point")->delimiter(',');
        sub->add_option("--to", cfg.to_pt, "geodesic end point")->delimiter(',');
        sub->add_option("--x0", cfg.x0, "simulation initial state")->delimiter(',');
        sub->add_option("--m21", cfg.m21, "observer M21 value");
        sub->add_option("--m22", cfg.m22, "observer M22 value");
        return sub;
    };

    auto* synth = add_common(app.add_subcommand("synth", "synthesize a stabilizing certificate"));
    auto* robust = add_common(app.add_subcommand("robust", "synthesize gain-bounded certificates"));
    auto* geod = add_common(app.add_subcommand("geodesic", "compute a geodesic under a certificate metric"));
    auto* simu = add_common(app.add_subcommand("simulate", "closed-loop simulation"));
    auto* obs = add_common(app.add_subcommand("observe", "reduced-order observer run"));
    auto* verf = add_common(app.add_subcommand("verify", "re-verify a certificate file"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        CLI::App* active = synth->parsed()     ? synth
                           : robust->parsed()  ? robust
                           : geod->parsed()    ? geod
                           : simu->parsed()    ? simu
                           : obs->parsed()     ? obs
                                               : verf;
        apply_config_file(*active, cfg);
        validate(cfg);
        if (synth->parsed()) return cmd_synth(cfg);
        if (robust->parsed()) return cmd_robust(cfg);
        if (geod->parsed()) return cmd_geodesic(cfg);
        if (simu->parsed()) return cmd_simulate(cfg);
        if (obs->parsed()) return cmd_observe(cfg);
        return cmd_verify(cfg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
