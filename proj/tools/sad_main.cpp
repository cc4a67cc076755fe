// CLI entry point; subcommands are registered in cli.cpp once the library
// settles. Placeholder during bring-up.
int main() { return 2; }
