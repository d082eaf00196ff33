#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <clocale>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qlvm/data.hpp"
#include "qlvm/io.hpp"
#include "qlvm/rng.hpp"

namespace fs = std::filesystem;
using namespace qlvm;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
    const char* bin = std::getenv("QLVM_CLI");
    REQUIRE_MESSAGE(bin != nullptr, "QLVM_CLI must point at the qlvm binary");
    const std::string cmd = std::string(bin) + " " + args + " 2>&1";
    std::FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

const std::string& scratch_root() {
    static const std::string root = [] {
        std::string dir = "/tmp/qlvm_cli_" + std::to_string(getpid());
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }();
    return root;
}

std::string scratch_dir(const std::string& name) {
    const std::string dir = scratch_root() + "/" + name;
    fs::remove_all(dir);
    return dir;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

std::vector<std::string> cells_of(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(cell);
    return out;
}

// Token of the form key=value inside a stdout line.
double parse_field(const std::string& line, const std::string& key) {
    const std::string needle = key + "=";
    const std::size_t at = line.find(needle);
    REQUIRE_MESSAGE(at != std::string::npos, (line + " lacks " + needle));
    return std::stod(line.substr(at + needle.size()));
}

// Small two-cluster problem shared by most tests.
const std::string kDataArgs =
    "synth_n=300 synth_k=2 synth_side=8 synth_sigma=1.2 batch_size=30 hidden=24,64";

const std::string& qlvm_run_dir() {
    static const std::string dir = [] {
        const std::string d = scratch_dir("qlvm_model");
        const RunResult r =
            run_cli("train --seed 3 --output " + d + " --set " + kDataArgs + " m=55 epochs=20");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
        return d;
    }();
    return dir;
}

const std::string& vae_run_dir() {
    static const std::string dir = [] {
        const std::string d = scratch_dir("vae_model");
        const RunResult r = run_cli("train --seed 4 --output " + d + " --set " + kDataArgs +
                                    " model=vae epochs=10");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
        return d;
    }();
    return dir;
}

std::string ckpt_of(const std::string& dir) { return dir + "/checkpoint.bin"; }

}  // namespace

TEST_CASE("train writes artifacts and reruns are byte-identical") {
    const std::string dir = qlvm_run_dir();
    for (const char* name : {"checkpoint.bin", "trace.csv", "lattice.csv", "config.txt"})
        CHECK(fs::exists(dir + "/" + name));
    CHECK_FALSE(fs::exists(dir + "/.lock"));

    const auto trace = lines_of(read_file(dir + "/trace.csv"));
    REQUIRE(trace.size() == 21);
    CHECK(trace[0] == "epoch,objective");
    CHECK(cells_of(trace[1])[0] == "0");
    const double first = std::stod(cells_of(trace[1])[1]);
    const double last = std::stod(cells_of(trace[20])[1]);
    CHECK(std::isfinite(first));
    CHECK(last > first);  // training moved uphill on this easy problem

    const auto lattice = lines_of(read_file(dir + "/lattice.csv"));
    REQUIRE(lattice.size() == 56);
    CHECK(lattice[0] == "z0,z1");

    const std::string config = read_file(dir + "/config.txt");
    CHECK(config.find("command=train\n") != std::string::npos);
    CHECK(config.find("m=55\n") != std::string::npos);
    CHECK(config.find("seed=3\n") != std::string::npos);

    // Rerunning into the same directory (lock released) reproduces every byte.
    const std::string before_ckpt = read_file(ckpt_of(dir));
    const std::string before_trace = read_file(dir + "/trace.csv");
    const RunResult again =
        run_cli("train --seed 3 --output " + dir + " --set " + kDataArgs + " m=55 epochs=20");
    REQUIRE_MESSAGE(again.exit_code == 0, again.output);
    CHECK(read_file(ckpt_of(dir)) == before_ckpt);
    CHECK(read_file(dir + "/trace.csv") == before_trace);
}

TEST_CASE("config errors exit 1 before any output appears") {
    const std::string dir = scratch_dir("badcfg");

    RunResult r = run_cli("train --seed 1 --output " + dir + " --set nosuchkey=3");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("unknown config key") != std::string::npos);
    CHECK_FALSE(fs::exists(dir));

    r = run_cli("train --seed 1 --output " + dir + " --set m=1");
    CHECK(r.exit_code == 1);
    CHECK_FALSE(fs::exists(dir));

    r = run_cli("train --seed 1 --output " + dir + " --set epochs=abc");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("epochs") != std::string::npos);
    CHECK_FALSE(fs::exists(dir));

    r = run_cli("train --output " + dir);  // --seed is required for train
    CHECK(r.exit_code == 1);

    r = run_cli("");
    CHECK(r.exit_code == 1);

    r = run_cli("--help");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("train") != std::string::npos);
}

TEST_CASE("numerical abort exits 2 and leaves no model artifacts") {
    const std::string dir = scratch_dir("explode");
    const RunResult r = run_cli(
        "train --seed 1 --output " + dir +
        " --set synth_n=100 synth_k=2 synth_side=8 synth_sigma=1.2 batch_size=25 "
        "head=gaussian prior=icdf m=8 korobov_a=3 learning_rate=1e160 epochs=3");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("non-finite") != std::string::npos);
    CHECK(fs::exists(dir + "/config.txt"));
    CHECK_FALSE(fs::exists(ckpt_of(dir)));
    CHECK_FALSE(fs::exists(dir + "/trace.csv"));
    CHECK_FALSE(fs::exists(dir + "/.lock"));
}

TEST_CASE("a held lock rejects the run and is respected across commands") {
    const std::string dir = scratch_dir("locked");
    fs::create_directories(dir);
    std::ofstream(dir + "/.lock").close();
    const RunResult r = run_cli("train --seed 1 --output " + dir + " --set " + kDataArgs +
                                " m=55 epochs=1");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("locked") != std::string::npos);
    CHECK_FALSE(fs::exists(ckpt_of(dir)));
    fs::remove(dir + "/.lock");
    const RunResult ok = run_cli("train --seed 1 --output " + dir + " --set " + kDataArgs +
                                 " m=55 epochs=1");
    CHECK(ok.exit_code == 0);
    CHECK(fs::exists(ckpt_of(dir)));
}

TEST_CASE("evaluate reports a deterministic qmc bound with populated std") {
    const std::string args =
        "evaluate --checkpoint " + ckpt_of(qlvm_run_dir()) + " --set m_eval=233 n_shifts=5";
    const RunResult a = run_cli(args);
    REQUIRE_MESSAGE(a.exit_code == 0, a.output);
    const RunResult b = run_cli(args);
    CHECK(a.output == b.output);

    const auto out = lines_of(a.output);
    REQUIRE(out.size() == 1);
    CHECK(out[0].rfind("qmc mean=", 0) == 0);
    const double mean = parse_field(out[0], "mean");
    const double stddev = parse_field(out[0], "std");
    CHECK(std::isfinite(mean));
    CHECK(mean < 0.0);
    CHECK(stddev > 0.0);  // n_shifts=5 populates the std column
    CHECK(parse_field(out[0], "shifts") == 5.0);
}

TEST_CASE("evaluate on baselines prints the native bound and the qmc re-evaluation") {
    const std::string outdir = scratch_dir("vae_eval");
    const RunResult r = run_cli("evaluate --checkpoint " + ckpt_of(vae_run_dir()) +
                                " --output " + outdir + " --set m_eval=233 n_shifts=4");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const auto out = lines_of(r.output);
    REQUIRE(out.size() == 2);
    CHECK(out[0].rfind("elbo mean=", 0) == 0);
    CHECK(out[1].rfind("qmc mean=", 0) == 0);
    CHECK(parse_field(out[0], "samples") == 1.0);

    const auto csv = lines_of(read_file(outdir + "/bound.csv"));
    REQUIRE(csv.size() == 3);
    CHECK(csv[0] == "bound,mean,std,samples");
    CHECK(cells_of(csv[1])[0] == "elbo");
    CHECK(cells_of(csv[2])[0] == "qmc");
    CHECK(std::stod(cells_of(csv[1])[1]) == doctest::Approx(parse_field(out[0], "mean")));

    // The stored checkpoint carries both networks.
    const Checkpoint ckpt = load_checkpoint(ckpt_of(vae_run_dir()));
    CHECK(ckpt.model_kind == "vae");
    REQUIRE(ckpt.networks.size() == 2);
    CHECK(ckpt.networks[0].first == "decoder");
    CHECK(ckpt.networks[1].first == "encoder");
}

TEST_CASE("evaluate rejects data that does not match the checkpoint") {
    const RunResult r = run_cli("evaluate --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --set m_eval=55 synth_side=12");
    CHECK(r.exit_code == 1);

    const RunResult gone = run_cli("evaluate --checkpoint /tmp/does_not_exist.bin");
    CHECK(gone.exit_code == 1);
}

TEST_CASE("embed writes one labeled row per datum") {
    const std::string outdir = scratch_dir("embed");
    const RunResult r = run_cli("embed --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --output " + outdir + " --set m_eval=233");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const auto csv = lines_of(read_file(outdir + "/embedding.csv"));
    REQUIRE(csv.size() == 301);
    CHECK(csv[0] == "index,mode_index,mode_0,mode_1,mean_0,mean_1,resultant,label");
    for (std::size_t i = 1; i < csv.size(); ++i) {
        const auto cells = cells_of(csv[i]);
        REQUIRE(cells.size() == 8);
        CHECK(std::stod(cells[0]) == static_cast<double>(i - 1));
        const double mode_index = std::stod(cells[1]);
        CHECK(mode_index >= 0.0);
        CHECK(mode_index < 233.0);
        CHECK(mode_index == std::floor(mode_index));
        for (int k = 2; k < 6; ++k) {
            CHECK(std::stod(cells[static_cast<std::size_t>(k)]) >= 0.0);
            CHECK(std::stod(cells[static_cast<std::size_t>(k)]) < 1.0);
        }
        const double resultant = std::stod(cells[6]);
        CHECK(resultant >= 0.0);
        CHECK(resultant <= 1.0 + 1e-12);
        const double label = std::stod(cells[7]);
        CHECK((label == 0.0 || label == 1.0));
    }
}

TEST_CASE("density emits a normalized field and a scaled raster") {
    const std::string outdir = scratch_dir("density");
    const RunResult r = run_cli("density --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --output " + outdir + " --set m_eval=987 resolution=64");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);

    const auto csv = lines_of(read_file(outdir + "/density.csv"));
    REQUIRE(csv.size() == 988);
    CHECK(csv[0] == "z0,z1,density");
    double total = 0.0;
    for (std::size_t i = 1; i < csv.size(); ++i) total += std::stod(cells_of(csv[i])[2]);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    const std::string pgm = read_file(outdir + "/density.pgm");
    const std::string header = "P5\n64 64\n255\n";
    REQUIRE(pgm.rfind(header, 0) == 0);
    CHECK(pgm.size() == header.size() + 64 * 64);

    const std::string scale = read_file(outdir + "/density.pgm.scale.txt");
    const auto scale_lines = lines_of(scale);
    REQUIRE(scale_lines.size() == 2);
    const double lo = std::stod(scale_lines[0].substr(4));
    const double hi = std::stod(scale_lines[1].substr(4));
    CHECK(scale_lines[0].rfind("min=", 0) == 0);
    CHECK(scale_lines[1].rfind("max=", 0) == 0);
    CHECK(lo <= hi);

    // Identical command, identical bytes (PGM included).
    const std::string outdir2 = scratch_dir("density2");
    const RunResult r2 = run_cli("density --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                 " --output " + outdir2 + " --set m_eval=987 resolution=64");
    REQUIRE_MESSAGE(r2.exit_code == 0, r2.output);
    CHECK(read_file(outdir2 + "/density.pgm") == pgm);
    CHECK(read_file(outdir2 + "/density.csv") == read_file(outdir + "/density.csv"));
}

TEST_CASE("cluster recovers the generator mode count at a tuned bandwidth") {
    bool matched = false;
    for (const char* bw : {"0.15", "0.2", "0.25", "0.12", "0.3"}) {
        const std::string outdir = scratch_dir(std::string("cluster_") + bw);
        const RunResult r =
            run_cli("cluster --checkpoint " + ckpt_of(qlvm_run_dir()) + " --output " + outdir +
                    " --set m_eval=987 bandwidth=" + bw);
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
        const double clusters = parse_field(r.output, "clusters");

        const auto centroids = lines_of(read_file(outdir + "/centroids.csv"));
        CHECK(centroids.size() == static_cast<std::size_t>(clusters) + 1);
        CHECK(centroids[0] == "z0,z1,density");
        const auto assign = lines_of(read_file(outdir + "/assignment.csv"));
        CHECK(assign.size() == 988);
        CHECK(assign[0] == "index,assignment,converged,mode_0,mode_1");
        for (std::size_t i = 1; i < assign.size(); ++i)
            CHECK(std::stod(cells_of(assign[i])[1]) < clusters);

        const std::string pgm = read_file(outdir + "/centroids.pgm");
        const std::string header =
            "P5\n" + std::to_string(8 * static_cast<int>(clusters)) + " 8\n255\n";
        CHECK(pgm.rfind(header, 0) == 0);

        if (clusters == 2.0) {
            matched = true;
            break;
        }
    }
    CHECK_MESSAGE(matched, "no bandwidth in the grid recovered the generator cluster count");
}

TEST_CASE("geodesic connects centroids and accepts raw coordinates") {
    const std::string outdir = scratch_dir("geodesic");
    const RunResult r = run_cli("geodesic --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --output " + outdir +
                                " --set m_eval=987 bandwidth=0.15 source_centroid=0 "
                                "destination_centroid=1");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const double cost = parse_field(r.output, "cost");
    const double nodes = parse_field(r.output, "nodes");
    CHECK(cost > 0.0);
    CHECK(nodes >= 2.0);

    const auto path = lines_of(read_file(outdir + "/path.csv"));
    REQUIRE(path.size() == static_cast<std::size_t>(nodes) + 1);
    CHECK(path[0] == "step,node,z0,z1,density");
    CHECK(fs::exists(outdir + "/geodesic.pgm"));
    const std::string header =
        "P5\n" + std::to_string(8 * static_cast<int>(nodes)) + " 8\n255\n";
    CHECK(read_file(outdir + "/geodesic.pgm").rfind(header, 0) == 0);

    const std::string outdir2 = scratch_dir("geodesic_xy");
    const RunResult r2 = run_cli("geodesic --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                 " --output " + outdir2 +
                                 " --set m_eval=233 source=0.1,0.1 destination=0.1,0.1");
    REQUIRE_MESSAGE(r2.exit_code == 0, r2.output);
    CHECK(parse_field(r2.output, "cost") == 0.0);
    CHECK(parse_field(r2.output, "nodes") == 1.0);

    const RunResult bad = run_cli("geodesic --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                  " --output " + scratch_dir("geodesic_bad") +
                                  " --set source_centroid=0");
    CHECK(bad.exit_code == 1);
}

TEST_CASE("jacobian writes raw and smoothed fields with a preserved mean") {
    const std::string outdir = scratch_dir("jacobian");
    const RunResult r = run_cli("jacobian --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --output " + outdir + " --set m_eval=233 resolution=32");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const auto raw = lines_of(read_file(outdir + "/jacobian.csv"));
    const auto smooth = lines_of(read_file(outdir + "/jacobian_smoothed.csv"));
    REQUIRE(raw.size() == 234);
    REQUIRE(smooth.size() == 234);
    CHECK(raw[0] == "z0,z1,frobenius");
    double raw_mean = 0.0, smooth_mean = 0.0;
    for (std::size_t i = 1; i < raw.size(); ++i) {
        const double rv = std::stod(cells_of(raw[i])[2]);
        const double sv = std::stod(cells_of(smooth[i])[2]);
        CHECK(rv >= 0.0);
        CHECK(sv >= 0.0);
        raw_mean += rv;
        smooth_mean += sv;
    }
    // Gaussian smoothing over a lattice is doubly stochastic: the mean
    // survives exactly up to rounding.
    CHECK(smooth_mean / 233.0 == doctest::Approx(raw_mean / 233.0).epsilon(1e-9));
    CHECK(fs::exists(outdir + "/jacobian.pgm"));
    CHECK(fs::exists(outdir + "/jacobian_smoothed.pgm"));

    // Any decoder qualifies: the vae checkpoint works too.
    const std::string outdir2 = scratch_dir("jacobian_vae");
    const RunResult r2 = run_cli("jacobian --checkpoint " + ckpt_of(vae_run_dir()) +
                                 " --output " + outdir2 + " --set m_eval=55 resolution=16");
    CHECK(r2.exit_code == 0);
}

TEST_CASE("analysis commands that need a posterior insist on a qlvm checkpoint") {
    for (const char* verb : {"embed", "density", "cluster", "geodesic"}) {
        const RunResult r = run_cli(std::string(verb) + " --checkpoint " +
                                    ckpt_of(vae_run_dir()) + " --output " +
                                    scratch_dir(std::string("wrongkind_") + verb));
        CHECK(r.exit_code == 1);
        CHECK(r.output.find("requires a qlvm checkpoint") != std::string::npos);
    }
}

TEST_CASE("traverse decodes a wrapped latent line") {
    const std::string outdir = scratch_dir("traverse");
    const RunResult r = run_cli("traverse --checkpoint " + ckpt_of(qlvm_run_dir()) +
                                " --output " + outdir + " --set direction=1,0 steps=6");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const auto csv = lines_of(read_file(outdir + "/traversal.csv"));
    REQUIRE(csv.size() == 7);
    CHECK(csv[0] == "step,z0,z1");
    for (int t = 0; t < 6; ++t) {
        const auto cells = cells_of(csv[static_cast<std::size_t>(t) + 1]);
        CHECK(std::stod(cells[1]) == doctest::Approx(t / 6.0).epsilon(1e-12));
        CHECK(std::stod(cells[2]) == 0.0);
    }
    const std::string header = "P5\n48 8\n255\n";
    CHECK(read_file(outdir + "/traversal.pgm").rfind(header, 0) == 0);

    CHECK(run_cli("traverse --checkpoint " + ckpt_of(qlvm_run_dir()) + " --output " +
                  scratch_dir("traverse_zero") + " --set direction=0,0 steps=4")
              .exit_code == 1);
    CHECK(run_cli("traverse --checkpoint " + ckpt_of(qlvm_run_dir()) + " --output " +
                  scratch_dir("traverse_nosteps") + " --set direction=1,0 steps=0")
              .exit_code == 1);
}

TEST_CASE("sample emits deterministic prior decodes") {
    const std::string outdir = scratch_dir("sample");
    const std::string args = "sample --checkpoint " + ckpt_of(qlvm_run_dir()) + " --seed 9 " +
                             "--set n_samples=5 --output ";
    REQUIRE(run_cli(args + outdir).exit_code == 0);
    const std::string outdir2 = scratch_dir("sample2");
    REQUIRE(run_cli(args + outdir2).exit_code == 0);
    CHECK(read_file(outdir + "/samples.csv") == read_file(outdir2 + "/samples.csv"));
    CHECK(read_file(outdir + "/samples.pgm") == read_file(outdir2 + "/samples.pgm"));

    const auto csv = lines_of(read_file(outdir + "/samples.csv"));
    REQUIRE(csv.size() == 6);
    REQUIRE(cells_of(csv[0]).size() == 64);
    for (std::size_t i = 1; i < csv.size(); ++i)
        for (const std::string& cell : cells_of(csv[i])) {
            const double v = std::stod(cell);
            CHECK(v > 0.0);  // bernoulli head means live strictly inside (0,1)
            CHECK(v < 1.0);
        }

    const std::string outdir3 = scratch_dir("sample3");
    REQUIRE(run_cli("sample --checkpoint " + ckpt_of(qlvm_run_dir()) + " --seed 10 " +
                    "--set n_samples=5 --output " + outdir3)
                .exit_code == 0);
    CHECK(read_file(outdir3 + "/samples.csv") != read_file(outdir + "/samples.csv"));
}

TEST_CASE("sweep tabulates cost and objective per value") {
    const std::string outdir = scratch_dir("sweep");
    const RunResult r = run_cli("sweep --seed 2 --output " + outdir + " --set " + kDataArgs +
                                " sweep_values=55,89 epochs=3 m_eval=233 n_shifts=3");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const auto csv = lines_of(read_file(outdir + "/sweep.csv"));
    REQUIRE(csv.size() == 3);
    CHECK(csv[0] == "value,seconds_per_epoch,objective");
    CHECK(cells_of(csv[1])[0] == "55");
    CHECK(cells_of(csv[2])[0] == "89");
    for (std::size_t i = 1; i < csv.size(); ++i) {
        const auto cells = cells_of(csv[i]);
        CHECK(std::stod(cells[1]) > 0.0);  // wall time is strictly positive
        CHECK(std::isfinite(std::stod(cells[2])));
    }

    CHECK(run_cli("sweep --seed 2 --output " + scratch_dir("sweep_empty") + " --set " +
                  kDataArgs + " sweep_values= epochs=1")
              .exit_code == 1);
    CHECK_FALSE(fs::exists(scratch_dir("sweep_empty")));
}

TEST_CASE("config files layer under --set overrides") {
    const std::string dir = scratch_dir("cfgfile");
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir + "/run.cfg");
        cfg << "# comment line\n\n" << "synth_n = 120\n" << "synth_k=2\nsynth_side=8\n"
            << "synth_sigma=1.2\n" << "m=55\n" << "epochs=2\n" << "batch_size=30\n"
            << "hidden=16,32\n";
    }
    const std::string outdir = dir + "/out";
    const RunResult r = run_cli("train --seed 5 --config " + dir + "/run.cfg --output " +
                                outdir + " --set epochs=3");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    const std::string config = read_file(outdir + "/config.txt");
    CHECK(config.find("epochs=3\n") != std::string::npos);   // override wins
    CHECK(config.find("synth_n=120\n") != std::string::npos);
    CHECK(lines_of(read_file(outdir + "/trace.csv")).size() == 4);

    {
        std::ofstream cfg(dir + "/bad.cfg");
        cfg << "not_a_key=1\n";
    }
    CHECK(run_cli("train --seed 5 --config " + dir + "/bad.cfg --output " + dir + "/out2")
              .exit_code == 1);
    CHECK_FALSE(fs::exists(dir + "/out2"));

    {
        std::ofstream cfg(dir + "/mangled.cfg");
        cfg << "epochs\n";
    }
    CHECK(run_cli("train --seed 5 --config " + dir + "/mangled.cfg --output " + dir + "/out3")
              .exit_code == 1);
}

TEST_CASE("format_double round-trips and stays locale neutral") {
    RandomStream rng(99);
    for (int i = 0; i < 2000; ++i) {
        const double v = (rng.uniform01() - 0.5) * std::pow(10.0, 40.0 * (rng.uniform01() - 0.5));
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(233.0) == "233");
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-0.0).find('.') == std::string::npos);
    if (std::setlocale(LC_ALL, "de_DE.UTF-8") != nullptr) {
        CHECK(format_double(0.5) == "0.5");  // '.' regardless of the global locale
        std::setlocale(LC_ALL, "C");
    }
}

TEST_CASE("bin_to_grid matches the brute-force nearest neighbor") {
    RandomStream rng(3);
    const int m = 117, res = 23;
    Matrix pts(m, 2);
    std::vector<double> values(m);
    for (int j = 0; j < m; ++j) {
        pts(j, 0) = rng.uniform01();
        pts(j, 1) = rng.uniform01();
        values[static_cast<std::size_t>(j)] = rng.uniform01();
    }
    const Matrix grid = bin_to_grid(pts, values, res);
    auto wrap = [](double d) {
        d = std::fabs(d);
        d -= std::floor(d);
        return std::min(d, 1.0 - d);
    };
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            const double p0 = (r + 0.5) / res, p1 = (c + 0.5) / res;
            double best = 2.0;
            int best_j = -1;
            for (int j = 0; j < m; ++j) {
                const double d0 = wrap(pts(j, 0) - p0), d1 = wrap(pts(j, 1) - p1);
                const double d2 = d0 * d0 + d1 * d1;
                if (d2 < best) {
                    best = d2;
                    best_j = j;
                }
            }
            CHECK(grid(r, c) == values[static_cast<std::size_t>(best_j)]);
        }

    CHECK_THROWS_AS(bin_to_grid(pts, values, 0), std::invalid_argument);
    CHECK_THROWS_AS(bin_to_grid(pts, std::vector<double>(3), res), std::invalid_argument);
    CHECK_THROWS_AS(bin_to_grid(Matrix(2, 3), std::vector<double>(2), res),
                    std::invalid_argument);
}

TEST_CASE("write_pgm scales to the byte range and records the scale") {
    const std::string dir = scratch_dir("pgm_unit");
    fs::create_directories(dir);
    Matrix grid(2, 2);
    grid(0, 0) = 0.0;
    grid(0, 1) = 1.0;
    grid(1, 0) = 0.5;
    grid(1, 1) = 0.25;
    write_pgm(dir + "/g.pgm", grid);
    const std::string pgm = read_file(dir + "/g.pgm");
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 4);
    CHECK(pgm.rfind(header, 0) == 0);
    const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[1] == 255);
    CHECK(px[2] == 128);  // round(0.5 * 255)
    CHECK(px[3] == 64);   // round(0.25 * 255)
    CHECK(read_file(dir + "/g.pgm.scale.txt") == "min=0\nmax=1\n");

    Matrix flat(1, 3);
    flat(0, 0) = flat(0, 1) = flat(0, 2) = 7.5;
    write_pgm(dir + "/flat.pgm", flat);
    const std::string fp = read_file(dir + "/flat.pgm");
    for (std::size_t i = fp.size() - 3; i < fp.size(); ++i) CHECK(fp[i] == '\0');
    CHECK(read_file(dir + "/flat.pgm.scale.txt") == "min=7.5\nmax=7.5\n");

    grid(1, 1) = std::nan("");
    CHECK_THROWS_AS(write_pgm(dir + "/bad.pgm", grid), std::invalid_argument);
}

TEST_CASE("image_strip lays frames out side by side") {
    Matrix frames(2, 6);  // two 2x3 frames
    for (int c = 0; c < 6; ++c) {
        frames(0, c) = c;
        frames(1, c) = 10 + c;
    }
    const Matrix strip = image_strip(frames, 2, 3);
    REQUIRE(strip.rows == 2);
    REQUIRE(strip.cols == 6);
    // frame 0 occupies columns 0..2, frame 1 columns 3..5
    CHECK(strip(0, 0) == 0);
    CHECK(strip(0, 2) == 2);
    CHECK(strip(1, 0) == 3);
    CHECK(strip(0, 3) == 10);
    CHECK(strip(1, 5) == 15);
    CHECK_THROWS_AS(image_strip(frames, 2, 4), std::invalid_argument);
    CHECK_THROWS_AS(image_strip(Matrix(0, 6), 2, 3), std::invalid_argument);
}

TEST_CASE("csv writers reject mismatched headers and keep the trace layout") {
    const std::string dir = scratch_dir("csv_unit");
    fs::create_directories(dir);
    CHECK_THROWS_AS(write_csv(dir + "/bad.csv", {"a", "b"}, Matrix(1, 3)),
                    std::invalid_argument);
    write_trace_csv(dir + "/t.csv", {-3.5, -2.25});
    CHECK(read_file(dir + "/t.csv") == "epoch,objective\n0,-3.5\n1,-2.25\n");
}

TEST_CASE("directory lock is exclusive and released on destruction") {
    const std::string dir = scratch_dir("lock_unit");
    fs::create_directories(dir);
    {
        DirectoryLock lock(dir);
        CHECK(fs::exists(dir + "/.lock"));
        CHECK_THROWS_AS(DirectoryLock{dir}, std::invalid_argument);
    }
    CHECK_FALSE(fs::exists(dir + "/.lock"));
    DirectoryLock relock(dir);  // released locks can be retaken
}

TEST_CASE("latent dimensions 1 and 3 train and analyze") {
    const std::string d1 = scratch_dir("latent1");
    const RunResult r1 = run_cli("train --seed 8 --output " + d1 + " --set " + kDataArgs +
                                 " latent_dim=1 m=55 epochs=2");
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);
    const std::string e1 = scratch_dir("latent1_embed");
    REQUIRE(run_cli("embed --checkpoint " + ckpt_of(d1) + " --output " + e1 +
                    " --set m_eval=89")
                .exit_code == 0);
    CHECK(lines_of(read_file(e1 + "/embedding.csv"))[0] ==
          "index,mode_index,mode_0,mean_0,resultant,label");
    const std::string t1 = scratch_dir("latent1_traverse");
    REQUIRE(run_cli("traverse --checkpoint " + ckpt_of(d1) + " --output " + t1 +
                    " --set direction=1 steps=4")
                .exit_code == 0);
    CHECK(lines_of(read_file(t1 + "/traversal.csv")).size() == 5);

    const std::string d3 = scratch_dir("latent3");
    const RunResult r3 = run_cli("train --seed 8 --output " + d3 + " --set " + kDataArgs +
                                 " latent_dim=3 m=53 epochs=1");
    REQUIRE_MESSAGE(r3.exit_code == 0, r3.output);
    const std::string dd3 = scratch_dir("latent3_density");
    REQUIRE(run_cli("density --checkpoint " + ckpt_of(d3) + " --output " + dd3 +
                    " --set m_eval=53")
                .exit_code == 0);
    const auto csv = lines_of(read_file(dd3 + "/density.csv"));
    CHECK(csv[0] == "z0,z1,z2,density");
    CHECK(csv.size() == 54);
    CHECK_FALSE(fs::exists(dd3 + "/density.pgm"));  // rasters are 2D only
}

TEST_CASE("idx inputs feed training and are never mutated") {
    const std::string dir = scratch_dir("idxdata");
    fs::create_directories(dir);
    Dataset ds = synth_mixture(11, 2, 40, 8, 1.0);
    write_idx_images(dir + "/images.idx", ds);
    write_idx_labels(dir + "/labels.idx", ds.labels);
    const std::string before_images = read_file(dir + "/images.idx");
    const std::string before_labels = read_file(dir + "/labels.idx");

    const std::string outdir = dir + "/out";
    const RunResult r = run_cli(
        "train --seed 6 --output " + outdir + " --set data=idx idx_images=" + dir +
        "/images.idx idx_labels=" + dir + "/labels.idx m=55 epochs=2 batch_size=18 "
        "hidden=12 latent_dim=2");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(fs::exists(ckpt_of(outdir)));
    CHECK(read_file(dir + "/images.idx") == before_images);
    CHECK(read_file(dir + "/labels.idx") == before_labels);

    const std::string config = read_file(outdir + "/config.txt");
    CHECK(config.find("data=idx\n") != std::string::npos);
}
