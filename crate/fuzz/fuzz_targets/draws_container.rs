//! The posterior-draw container decoder validates every length against the
//! remaining input; decoding arbitrary bytes must stay memory-safe. When a
//! mutation happens to decode, the result must re-encode and survive a
//! second decode (the format round-trips).

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(draws) = mebart::draws::decode(data) {
        let bytes = mebart::draws::encode(&draws);
        let again = mebart::draws::decode(&bytes).expect("re-encoded container must decode");
        assert_eq!(again.sigma, draws.sigma);
    }
});
