//! Seeded generator for small aligned corpora over cardinals, years,
//! letter sequences, street abbreviations and units.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SemioticClass, Sentence, SpokenForm, Token};

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 10] = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

/// Cardinal reading, e.g. `123` as "one hundred twenty three". Supports 0..=999_999.
pub fn cardinal_words(n: u32) -> Vec<String> {
    assert!(n < 1_000_000, "cardinal {n} out of range");
    let mut out = Vec::new();
    if n == 0 {
        out.push(ONES[0].to_string());
        return out;
    }
    if n >= 1000 {
        out.extend(below_thousand(n / 1000));
        out.push("thousand".to_string());
    }
    if !n.is_multiple_of(1000) {
        out.extend(below_thousand(n % 1000));
    }
    out
}

fn below_thousand(n: u32) -> Vec<String> {
    let mut out = Vec::new();
    if n >= 100 {
        out.push(ONES[(n / 100) as usize].to_string());
        out.push("hundred".to_string());
    }
    if !n.is_multiple_of(100) {
        out.extend(below_hundred(n % 100));
    }
    out
}

fn below_hundred(n: u32) -> Vec<String> {
    if n < 20 {
        vec![ONES[n as usize].to_string()]
    } else if n.is_multiple_of(10) {
        vec![TENS[(n / 10) as usize].to_string()]
    } else {
        vec![TENS[(n / 10) as usize].to_string(), ONES[(n % 10) as usize].to_string()]
    }
}

/// House-number reading: leading digit, then the last two as a pair,
/// e.g. `123` as "one twenty three" and `105` as "one oh five".
pub fn address_words(n: u32) -> Vec<String> {
    if !(100..1000).contains(&n) {
        return cardinal_words(n);
    }
    let mut out = vec![ONES[(n / 100) as usize].to_string()];
    match n % 100 {
        0 => out.push("hundred".to_string()),
        r if r < 10 => out.extend(["oh".to_string(), ONES[r as usize].to_string()]),
        r => out.extend(below_hundred(r)),
    }
    out
}

/// Year reading for 1100..=2099, e.g. "nineteen ninety three", "two thousand five".
pub fn year_words(y: u32) -> Vec<String> {
    assert!((1100..2100).contains(&y), "year {y} out of range");
    if (2000..2010).contains(&y) {
        return cardinal_words(y);
    }
    let (hi, lo) = (y / 100, y % 100);
    let mut out = below_hundred(hi);
    match lo {
        0 => out.push("hundred".to_string()),
        r if r < 10 => out.extend(["oh".to_string(), ONES[r as usize].to_string()]),
        r => out.extend(below_hundred(r)),
    }
    out
}

const STREETS: [&str; 6] = ["King", "Oak", "Maple", "Main", "Park", "Hill"];
const STREET_TYPES: [(&str, &str); 4] = [("Ave", "avenue"), ("St", "street"), ("Dr", "drive"), ("Rd", "road")];
const NOUNS: [&str; 6] = ["books", "cars", "birds", "people", "boxes", "trees"];
const VERBS: [&str; 4] = ["saw", "found", "counted", "sold"];
const SUBJECTS: [&str; 4] = ["We", "They", "You", "I"];
const LETTER_WORDS: [&str; 6] = ["AAUS", "BBC", "NASA", "UK", "FBI", "IBM"];
const PLACES: [&str; 4] = ["office", "school", "station", "club"];

fn plain(w: &str) -> Token {
    Token::new(SemioticClass::Plain, w, SpokenForm::SelfCopy)
}

fn spoken(class: SemioticClass, written: impl Into<String>, words: Vec<String>) -> Token {
    Token::new(class, written, SpokenForm::Words(words))
}

fn period() -> Token {
    Token::new(SemioticClass::Punct, ".", SpokenForm::Silent)
}

fn letters(written: &str) -> Vec<String> {
    written.chars().map(|c| c.to_lowercase().to_string()).collect()
}

fn sentence(rng: &mut ChaCha8Rng) -> Vec<Token> {
    let mut t = Vec::new();
    match rng.gen_range(0..5) {
        0 => {
            let n = rng.gen_range(100..1000);
            let (abbr, full) = *STREET_TYPES.choose(rng).unwrap();
            t.extend([plain(SUBJECTS.choose(rng).unwrap()), plain("live"), plain("at")]);
            t.push(spoken(SemioticClass::Address, n.to_string(), address_words(n)));
            t.push(plain(STREETS.choose(rng).unwrap()));
            t.push(spoken(SemioticClass::Plain, abbr, vec![full.to_string()]));
        }
        1 => {
            let n = rng.gen_range(2..1000);
            t.extend([plain(SUBJECTS.choose(rng).unwrap()), plain(VERBS.choose(rng).unwrap())]);
            t.push(spoken(SemioticClass::Cardinal, n.to_string(), cardinal_words(n)));
            t.push(plain(NOUNS.choose(rng).unwrap()));
        }
        2 => {
            let y = rng.gen_range(1900..2030);
            let w = *LETTER_WORDS.choose(rng).unwrap();
            t.extend([plain("The"), spoken(SemioticClass::Letters, w, letters(w))]);
            t.extend([plain(PLACES.choose(rng).unwrap()), plain("opened"), plain("in")]);
            t.push(spoken(SemioticClass::Date, y.to_string(), year_words(y)));
        }
        3 => {
            let n = if rng.gen_bool(0.2) { 1 } else { rng.gen_range(2..100) };
            let unit = if n == 1 { "foot" } else { "feet" };
            t.extend([plain("It"), plain("is")]);
            t.push(spoken(SemioticClass::Cardinal, n.to_string(), cardinal_words(n)));
            t.push(spoken(SemioticClass::Measure, "ft", vec![unit.to_string()]));
            t.push(plain("long"));
        }
        _ => {
            let w = *LETTER_WORDS.choose(rng).unwrap();
            t.extend([plain(SUBJECTS.choose(rng).unwrap()), plain("met"), plain("the")]);
            t.push(spoken(SemioticClass::Letters, w, letters(w)));
            t.push(plain("team"));
        }
    }
    if rng.gen_bool(0.5) {
        t.push(period());
    }
    t
}

/// `count` sentences with ids `g0, g1, ...`; a pure function of the seed.
pub fn generate(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| Sentence::new(format!("g{i}"), sentence(&mut rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{roundtrip_check, Representation};

    fn w(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn number_readings() {
        assert_eq!(cardinal_words(0), w("zero"));
        assert_eq!(cardinal_words(123), w("one hundred twenty three"));
        assert_eq!(cardinal_words(40), w("forty"));
        assert_eq!(cardinal_words(2005), w("two thousand five"));
        assert_eq!(cardinal_words(12_019), w("twelve thousand nineteen"));
        assert_eq!(address_words(123), w("one twenty three"));
        assert_eq!(address_words(105), w("one oh five"));
        assert_eq!(address_words(700), w("seven hundred"));
        assert_eq!(year_words(1993), w("nineteen ninety three"));
        assert_eq!(year_words(1900), w("nineteen hundred"));
        assert_eq!(year_words(1905), w("nineteen oh five"));
        assert_eq!(year_words(2005), w("two thousand five"));
        assert_eq!(year_words(2019), w("twenty nineteen"));
    }

    #[test]
    fn generation_is_seeded_and_valid() {
        let a = generate(300, 5);
        assert_eq!(a, generate(300, 5));
        assert_ne!(a, generate(300, 6));
        for s in &a {
            for repr in Representation::ALL {
                assert!(roundtrip_check(s, repr), "{s:?}");
            }
        }
    }
}
