#include <CLI11.hpp>

#include <iostream>

#include "hfusion/errors.h"
#include "hfusion/synth.h"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic infrared/visible demo corpus", "hfusion-synth"};
  std::string out;
  hfusion::synth::SynthOptions options;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--pairs", options.pairs, "number of scenes");
  app.add_option("--size", options.size, "image side length");
  app.add_option("--seed", options.seed);
  app.add_option("--duplicates", options.duplicates, "near-copies of the first scenes");
  app.add_option("--methods", options.methods, "fusion rules: average maximum artifact");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  }
  try {
    const auto corpus = hfusion::synth::generate(out, options);
    std::cout << corpus.sources.size() << " pairs written to " << out << "\n";
    for (const auto& [method, dir] : corpus.fused_dirs) {
      std::cout << "  --fused-dirs " << method << "=" << dir.string() << "\n";
    }
  } catch (const hfusion::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
