fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.pragma_once = true;
    config.cpp_compat = true;
    config.documentation = true;
    config.enumeration.prefix_with_name = true;
    config.header =
        Some("/* C interface to the desplat engine. Generated by cbindgen. */".into());
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/desplat.h"));
        }
        // header generation must not break `cargo check` during development
        Err(e) => println!("cargo:warning=cbindgen failed: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
