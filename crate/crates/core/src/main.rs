fn main() { porosplit::cli::main_entry() }
