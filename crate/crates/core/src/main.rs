#[tokio::main]
async fn main() {
    let code = router_audit::cli::run(std::env::args_os()).await;
    std::process::exit(code);
}
