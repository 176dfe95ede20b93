fn main() {
    println!("swtr: subcommands arrive with the pipeline modules");
}
