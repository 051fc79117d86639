//! Writing a simulated path to CSV and to the binary format, and reading it
//! back.

use epidiff::models::{sir_params, sir_table};
use epidiff::simulate::io::{read_binary, read_csv, write_binary, write_csv};
use epidiff::simulate::{gillespie, StreamSeed};

fn main() -> epidiff::Result<()> {
    let table = sir_table();
    let path = gillespie(&table, &sir_params(1.5, 3.0)?, 200, &[196, 4], 40.0, StreamSeed::new(6, 0))?;
    let mut csv = Vec::new();
    write_csv(&path, &table.compartments, &mut csv)?;
    let text = String::from_utf8(csv.clone()).unwrap();
    for line in text.lines().take(5) {
        println!("{line}");
    }
    println!("... {} lines, {} bytes", text.lines().count(), csv.len());
    let (back, names) = read_csv(csv.as_slice())?;
    println!("CSV round trip exact: {} ({names:?})", back == path);
    let mut bin = Vec::new();
    write_binary(&path, &mut bin)?;
    println!("binary: {} bytes, round trip exact: {}", bin.len(), read_binary(bin.as_slice())? == path);
    Ok(())
}
