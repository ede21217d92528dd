// Writes seeded synthetic feature files for demos and smoke tests.

#include <iostream>

#include "CLI11.hpp"

#include "drex/feature_store.hpp"
#include "drex/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic DRXF feature files", "drex-synth"};
  std::string out, target = "both";
  std::size_t n = 2000, split = 0, dino_dim = 384;
  std::uint64_t seed = 0;
  bool unscored = false;
  app.add_option("--out", out, "Output .drxf path")->required();
  app.add_option("-n,--records", n, "Number of records");
  app.add_option("--split", split, "Split index; different splits share the generating process");
  app.add_option("--seed", seed, "World seed");
  app.add_option("--target", target, "both | dino | resnet | constant");
  app.add_option("--dino-dim", dino_dim, "DINO width");
  app.add_flag("--unscored", unscored, "Drop the scores");
  CLI11_PARSE(app, argc, argv);

  drex::synthetic::Spec spec;
  spec.seed = seed;
  spec.dims.dino_dim = dino_dim;
  if (target == "both") spec.target = drex::synthetic::Target::both;
  else if (target == "dino") spec.target = drex::synthetic::Target::dino_only;
  else if (target == "resnet") spec.target = drex::synthetic::Target::resnet_only;
  else if (target == "constant") spec.target = drex::synthetic::Target::constant;
  else {
    std::cerr << "drex-synth: unknown target '" << target << "'\n";
    return 2;
  }
  try {
    auto m = drex::synthetic::generate(spec, n, split);
    if (unscored)
      for (auto& r : m.records) r.score.reset();
    drex::write_features(m, out);
    std::cout << "wrote " << m.size() << " records to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "drex-synth: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
