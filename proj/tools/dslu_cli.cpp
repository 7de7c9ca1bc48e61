#include "commands.hpp"

int main(int argc, char** argv) {
  return dslu::cli::run(std::vector<std::string>(argv, argv + argc));
}
