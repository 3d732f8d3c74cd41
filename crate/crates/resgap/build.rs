fn main() {
    // Dense and banded complex linear algebra is delegated to the system
    // OpenBLAS (which bundles LAPACK); see src/quantum/lapack.rs.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
