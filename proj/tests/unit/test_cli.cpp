#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
	int status;
	std::string out;
};

Run run(const std::string& args) {
	const std::string cmd = std::string(SSMAF_CLI_PATH) + " " + args + " 2>&1";
	Run r{-1, {}};
	FILE* pipe = popen(cmd.c_str(), "r");
	REQUIRE(pipe != nullptr);
	char buf[4096];
	std::size_t n;
	while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
	const int st = pclose(pipe);
	r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
	return r;
}

const std::string kSmall =
		" synth.hr_height=32 synth.hr_width=32 synth.lesion_radius_max=6"
		" model.base_width=4 model.depth=2 model.fusion_dim=8 model.sr_hidden=8";

fs::path scratch(const std::string& name) {
	fs::path p = fs::temp_directory_path() / ("ssmaf_cli_" + name);
	fs::remove_all(p);
	return p;
}

}  // namespace

TEST_CASE("synth, train, eval and infer end to end") {
	const fs::path root = scratch("e2e");
	const std::string data = (root / "data").string(), runs = (root / "run").string();

	Run s = run("synth --out " + data + " --n-train 2 --n-test 1" + kSmall);
	REQUIRE(s.status == 0);
	CHECK(s.out.find("train: 2") != std::string::npos);
	CHECK(s.out.find("test: 1") != std::string::npos);

	Run t = run("train --data " + data + " --out " + runs + " --epochs 2" + kSmall);
	REQUIRE(t.status == 0);
	CHECK(fs::exists(fs::path(runs) / "final.ckpt"));
	CHECK(fs::exists(fs::path(runs) / "metrics.jsonl"));

	const std::string ckpt = (fs::path(runs) / "final.ckpt").string();
	Run e = run("eval --data " + data + " --checkpoint " + ckpt + " --out " + (root / "eval").string());
	REQUIRE(e.status == 0);
	CHECK(e.out.find("image=0002 dice=") != std::string::npos);
	CHECK(e.out.find("variant=interp_sr_maf split=test images=1") != std::string::npos);
	std::ifstream mj(root / "eval" / "metrics.json");
	auto j = nlohmann::json::parse(mj);
	CHECK(j.contains("pooled"));

	Run i = run("infer --data " + data + " --checkpoint " + ckpt + " --out " + (root / "infer").string());
	REQUIRE(i.status == 0);
	CHECK(fs::exists(root / "infer" / "masks" / "0002.pgm"));
	CHECK(fs::exists(root / "infer" / "overlays" / "0002.ppm"));

	Run mismatch = run("eval --data " + data + " --checkpoint " + ckpt + " --variant baseline");
	CHECK(mismatch.status != 0);
	CHECK(mismatch.out.find("error:") != std::string::npos);

	fs::remove_all(root);
}

TEST_CASE("input errors exit non-zero with a message") {
	const fs::path root = scratch("errors");
	Run empty = run("synth --out " + root.string() + " --n-train 0 --n-test 1" + kSmall);
	CHECK(empty.status != 0);
	CHECK(empty.out.find("empty training split") != std::string::npos);

	Run unknown = run("synth --out " + root.string() + " synth.bogus=1");
	CHECK(unknown.status != 0);
	CHECK(unknown.out.find("synth.bogus") != std::string::npos);

	Run missing = run("train --data " + (root / "nope").string() + " --out " + (root / "r").string());
	CHECK(missing.status != 0);
	CHECK(missing.out.find("error:") != std::string::npos);

	Run bad_variant = run("train --data x --out y --variant unet");
	CHECK(bad_variant.status != 0);
	fs::remove_all(root);
}

TEST_CASE("gradcheck detects an injected fault") {
	Run ok = run("gradcheck --trials 2 --skip-model");
	CHECK(ok.status == 0);
	CHECK(ok.out.find("gradcheck passed") != std::string::npos);

	Run bad = run("gradcheck --trials 2 --skip-model --inject-fault relu");
	CHECK(bad.status == 1);
	CHECK(bad.out.find("FAIL") != std::string::npos);
}
