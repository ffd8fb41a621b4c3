#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| dualloop_fuzz::telemetry_jsonl(data));
