fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    // Header generation is opt-in so plain builds need no extra tooling.
    // `cargo build -p gated-attn-ffi --features bindgen` rewrites
    // include/gated_attn.h in place; commit the result.
    #[cfg(feature = "bindgen")]
    {
        let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
        let out = std::path::Path::new(&crate_dir).join("include/gated_attn.h");
        cbindgen::generate(&crate_dir)
            .expect("cbindgen failed; see cbindgen.toml")
            .write_to_file(out);
    }
}
