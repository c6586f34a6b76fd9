// Writes the synthetic check-in fixture used by the tests and the README walkthrough.
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fixture_gen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic Foursquare-format check-in log"};
  nextpoi::fixture::Options o;
  std::string out;
  app.add_option("-o,--out", out, "Output TSV")->required();
  app.add_option("--users", o.users, "Number of users");
  app.add_option("--pois", o.pois, "Number of venues");
  app.add_option("--seed", o.seed, "Seed");
  CLI11_PARSE(app, argc, argv);
  std::ofstream f(out, std::ios::binary);
  if (!f) {
    std::cerr << "cannot write " << out << "\n";
    return 2;
  }
  f << nextpoi::fixture::generate_tsv(o);
  return f.good() ? 0 : 2;
}
