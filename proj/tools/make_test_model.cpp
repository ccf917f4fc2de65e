// Writes a tiny random-weight ONNX model with the raw detection-head
// layout, for CI and local smoke tests.
//
//   make_test_model --out tiny.onnx [--input 64] [--classes 2] [--reg-max 16] [--seed 0]

#include <iostream>

#include <CLI11.hpp>

#include "tiny_model.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a tiny random-weight detection model (ONNX)"};
  std::string out;
  fracdet::tools::TinyModelOptions opts;
  app.add_option("--out", out, "Output .onnx path")->required();
  app.add_option("--input", opts.input_size, "Square input size (multiple of 32)")->capture_default_str();
  app.add_option("--classes", opts.num_classes, "Number of classes")->capture_default_str();
  app.add_option("--reg-max", opts.reg_max, "DFL bins minus one")->capture_default_str();
  app.add_option("--seed", opts.seed, "Weight RNG seed")->capture_default_str();
  app.add_option("--scale", opts.weight_scale, "Weight standard deviation")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    fracdet::tools::write_tiny_model(out, opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << out << ": input " << opts.input_size << ", " << fracdet::tools::tiny_model_channels(opts)
            << " channels x " << fracdet::tools::tiny_model_anchors(opts) << " anchors\n";
  return 0;
}
