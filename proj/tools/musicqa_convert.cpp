// Converts a source distribution file to a clip manifest (JSONL).
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "musicqa/adapters.hpp"
#include "musicqa/cli.hpp"
#include "musicqa/errors.hpp"
#include "musicqa/fileio.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Convert MusicCaps / MagnaTagATune / FMA metadata to a clip manifest", "musicqa-convert"};
  std::string format, input, out;
  app.add_option("--format", format, "Source format")->required()->check(CLI::IsMember({"musiccaps", "mtt", "fma"}));
  app.add_option("--input", input, "Source CSV/TSV")->required();
  app.add_option("--out", out, "Manifest path (stdout if omitted)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? musicqa::kExitOk : musicqa::kExitUsage;
  }
  try {
    const std::string text = musicqa::read_file(input);
    std::vector<musicqa::ClipRecord> clips;
    if (format == "musiccaps") clips = musicqa::convert_musiccaps(text);
    else if (format == "mtt") clips = musicqa::convert_mtt(text);
    else clips = musicqa::convert_fma(text);
    std::string body;
    for (const auto& c : clips) body += musicqa::manifest_line(c) + "\n";
    if (out.empty()) std::cout << body;
    else musicqa::write_file_atomic(out, body);
    std::cerr << input << ": " << clips.size() << " clips\n";
    return musicqa::kExitOk;
  } catch (const musicqa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return musicqa::kExitData;
  }
}
