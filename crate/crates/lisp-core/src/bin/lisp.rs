fn main() { println!("lisp"); }
