pub fn run_command(_argv: &[String]) -> i32 { 0 }
