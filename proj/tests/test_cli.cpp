#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "textldm/checkpoint.hpp"

namespace {

struct RunResult {
  int code = 0;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = tldm::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TempDir {
  std::string path;
  TempDir() {
    char tmpl[] = "/tmp/tldm_cli_XXXXXX";
    path = mkdtemp(tmpl);
  }
  std::string file(const std::string& name) const { return path + "/" + name; }
};

/// Small trained pipeline shared by the sampling/eval cases.
struct Pipeline {
  TempDir dir;
  std::string corpus, vae, dit;

  Pipeline() {
    corpus = dir.file("corpus.txt");
    vae = dir.file("vae.tldm");
    dit = dir.file("dit.tldm");
    REQUIRE(run_cli({"make-corpus", "--out", corpus, "--docs", "48", "--seed", "3"}).code == 0);
    REQUIRE(run_cli({"train-vae", "--corpus", corpus, "--out", vae, "--steps", "30",
                     "--batch", "4", "--layers", "1", "--dim", "16", "--heads", "2",
                     "--ffn-mult", "2", "--latent-dim", "4", "--holdout", "8",
                     "--eval-every", "0", "--seed", "1"})
                .code == 0);
    REQUIRE(run_cli({"train-dit", "--vae", vae, "--corpus", corpus, "--out", dit, "--steps",
                     "30", "--batch", "4", "--layers", "1", "--dim", "16", "--heads", "2",
                     "--ffn-mult", "2", "--holdout", "8", "--eval-every", "0", "--seed", "1"})
                .code == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("missing required flag is a usage error") {
  RunResult r = run_cli({"sample", "--dit", "/nonexistent", "--len", "4"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--vae") != std::string::npos);
  CHECK(r.err.find("usage") != std::string::npos);
}

TEST_CASE("unknown flags are errors, never ignored") {
  RunResult r = run_cli({"make-corpus", "--out", "/tmp/x.txt", "--frobnicate", "9"});
  CHECK(r.code == 1);
  CHECK(r.err.find("frobnicate") != std::string::npos);
}

TEST_CASE("unknown subcommand is a usage error") {
  CHECK(run_cli({"frobnicate"}).code == 1);
}

TEST_CASE("help exits zero") {
  RunResult r = run_cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("make-corpus") != std::string::npos);
  RunResult rs = run_cli({"sample", "--help"});
  CHECK(rs.code == 0);
  CHECK(rs.out.find("--cfg") != std::string::npos);
}

TEST_CASE("make-corpus is deterministic per seed") {
  TempDir dir;
  const auto a = dir.file("a.txt"), b = dir.file("b.txt"), c = dir.file("c.txt");
  REQUIRE(run_cli({"make-corpus", "--out", a, "--docs", "20", "--seed", "5"}).code == 0);
  REQUIRE(run_cli({"make-corpus", "--out", b, "--docs", "20", "--seed", "5"}).code == 0);
  REQUIRE(run_cli({"make-corpus", "--out", c, "--docs", "20", "--seed", "6"}).code == 0);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("missing corpus file is a data error") {
  RunResult r = run_cli({"train-vae", "--corpus", "/nonexistent.txt", "--out", "/tmp/x.tldm",
                         "--steps", "1"});
  CHECK(r.code == 2);
  CHECK(r.err.find("nonexistent") != std::string::npos);
}

TEST_CASE("sample stdout is byte-identical across runs") {
  Pipeline& p = pipeline();
  const std::vector<std::string> args = {"sample", "--vae", p.vae, "--dit", p.dit,
                                         "--prompt", "the red cat", "--len", "8",
                                         "--steps", "10", "--cfg", "7", "--seed", "1"};
  RunResult a = run_cli(args);
  RunResult b = run_cli(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(!a.out.empty());

  auto c = args;
  c.back() = "2";  // different seed
  RunResult d = run_cli(c);
  REQUIRE(d.code == 0);
  // (different noise; output may coincide on a toy model but usually differs)
  CHECK(d.out.size() > 0);
}

TEST_CASE("sample with zero length emits empty output and exit 0") {
  Pipeline& p = pipeline();
  RunResult r = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt", "the red cat",
                         "--len", "0", "--steps", "5", "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out == "\n");
}

TEST_CASE("unconditional sampling skips the prompt") {
  Pipeline& p = pipeline();
  RunResult r = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--unconditional",
                         "--len", "6", "--steps", "5", "--seed", "4"});
  CHECK(r.code == 0);
}

TEST_CASE("latent dimension mismatch between checkpoints is a data error") {
  Pipeline& p = pipeline();
  TempDir dir;
  const auto other_vae = dir.file("vae8.tldm");
  REQUIRE(run_cli({"train-vae", "--corpus", p.corpus, "--out", other_vae, "--steps", "2",
                   "--batch", "2", "--layers", "1", "--dim", "16", "--heads", "2",
                   "--ffn-mult", "2", "--latent-dim", "8", "--holdout", "8",
                   "--eval-every", "0"})
              .code == 0);
  RunResult r = run_cli({"sample", "--vae", other_vae, "--dit", p.dit, "--prompt", "the",
                         "--len", "4", "--steps", "3"});
  CHECK(r.code == 2);
  CHECK(r.err.find("latent dimension mismatch") != std::string::npos);
}

TEST_CASE("corrupt checkpoint is a data error") {
  Pipeline& p = pipeline();
  TempDir dir;
  const auto bad = dir.file("bad.tldm");
  {
    std::ifstream in(p.vae, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() / 2);
    std::ofstream out(bad, std::ios::binary);
    out << bytes;
  }
  RunResult r = run_cli({"sample", "--vae", bad, "--dit", p.dit, "--prompt", "the", "--len",
                         "4", "--steps", "3"});
  CHECK(r.code == 2);
  CHECK(r.err.find("offset") != std::string::npos);
}

TEST_CASE("trace emits the requested step records") {
  Pipeline& p = pipeline();
  RunResult r = run_cli({"trace", "--vae", p.vae, "--dit", p.dit, "--prompt", "the red cat",
                         "--len", "6", "--steps", "50", "--cfg", "7", "--seed", "1",
                         "--dump-at", "10,20,30,40,50"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line;
  int count = 0;
  int expected[] = {10, 20, 30, 40, 50};
  while (std::getline(lines, line)) {
    REQUIRE(count < 5);
    std::ostringstream prefix;
    prefix << "step " << expected[count] << " t=";
    CHECK(line.rfind(prefix.str(), 0) == 0);
    CHECK(line.find(" | ") != std::string::npos);
    ++count;
  }
  CHECK(count == 5);

  // the final record is at t = 0
  CHECK(r.out.find("step 50 t=0.000000") != std::string::npos);
}

TEST_CASE("trace rejects out-of-range dump steps") {
  Pipeline& p = pipeline();
  RunResult r = run_cli({"trace", "--vae", p.vae, "--dit", p.dit, "--len", "4", "--steps",
                         "10", "--dump-at", "11", "--unconditional"});
  CHECK(r.code == 1);
}

TEST_CASE("eval produces a deterministic report") {
  Pipeline& p = pipeline();
  const std::vector<std::string> args = {"eval", "--vae", p.vae, "--dit", p.dit,
                                         "--testset", p.corpus, "--samples", "6",
                                         "--steps", "5", "--cfg", "7", "--seed", "2"};
  RunResult a = run_cli(args);
  RunResult b = run_cli(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("rouge1_f1 = ") != std::string::npos);
  CHECK(a.out.find("mean_nfe = 10.00") != std::string::npos);  // 2K with guidance
  CHECK(a.out.find("config_hash = ") != std::string::npos);
  // wall time goes to stderr only
  CHECK(a.out.find("wall_ms") == std::string::npos);
  CHECK(a.err.find("wall_ms") != std::string::npos);
}

TEST_CASE("config file values apply under explicit-flag precedence") {
  Pipeline& p = pipeline();
  TempDir dir;
  const auto cfg = dir.file("sample.cfg");
  {
    std::ofstream out(cfg);
    out << "# sampling defaults\n";
    out << "len = 5\n";
    out << "steps = 6\n";
    out << "seed = 9\n";
  }
  // config value used when the flag is absent
  RunResult from_cfg = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt", "the",
                                "--config", cfg});
  REQUIRE(from_cfg.code == 0);
  RunResult explicit_match = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt",
                                      "the", "--len", "5", "--steps", "6", "--seed", "9"});
  CHECK(from_cfg.out == explicit_match.out);

  // explicit flag overrides the config value, key by key
  RunResult overridden = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt", "the",
                                  "--config", cfg, "--seed", "11"});
  RunResult direct = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt", "the",
                              "--len", "5", "--steps", "6", "--seed", "11"});
  REQUIRE(overridden.code == 0);
  CHECK(overridden.out == direct.out);
}

TEST_CASE("unknown config keys are errors") {
  Pipeline& p = pipeline();
  TempDir dir;
  const auto cfg = dir.file("bad.cfg");
  {
    std::ofstream out(cfg);
    out << "wibble = 3\n";
  }
  RunResult r = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt", "the", "--len",
                         "4", "--config", cfg});
  CHECK(r.code == 1);
  CHECK(r.err.find("wibble") != std::string::npos);
}

TEST_CASE("cfg 0 follows the pure unconditional velocity path") {
  Pipeline& p = pipeline();
  // With w = 0 the guided velocity equals the null branch bit-exactly, so a
  // prompted sample must match the same-noise sample whose context latents
  // are zero vectors. Zero-vector context of the same length is exactly what
  // the dropped-context branch sees.
  RunResult with_prompt = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt",
                                   "the red cat", "--len", "6", "--steps", "8", "--cfg", "0",
                                   "--seed", "3"});
  RunResult other_prompt = run_cli({"sample", "--vae", p.vae, "--dit", p.dit, "--prompt",
                                    "a big dog", "--len", "6", "--steps", "8", "--cfg", "0",
                                    "--seed", "3"});
  REQUIRE(with_prompt.code == 0);
  REQUIRE(other_prompt.code == 0);
  CHECK(with_prompt.out == other_prompt.out);
}

TEST_CASE("stdout is identical across worker-thread counts") {
  Pipeline& p = pipeline();
  const std::string cmd_tail = std::string(TEXTLDM_CLI_PATH) + " eval --vae " + p.vae +
                               " --dit " + p.dit + " --testset " + p.corpus +
                               " --samples 4 --steps 4 --seed 5 2>/dev/null";
  TempDir dir;
  const auto out1 = dir.file("t1.txt"), out4 = dir.file("t4.txt");
  REQUIRE(std::system(("TLDM_THREADS=1 " + cmd_tail + " > " + out1).c_str()) == 0);
  REQUIRE(std::system(("TLDM_THREADS=4 " + cmd_tail + " > " + out4).c_str()) == 0);
  std::ifstream a(out1), b(out4);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

}  // TEST_SUITE
