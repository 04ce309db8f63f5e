//! Brute-force answer oracle: loops over pixels directly, never builds a
//! transition matrix or calls into the rule engine.

#![allow(dead_code)]

pub struct OracleAnswer {
    pub token: String,
    pub bits: Vec<bool>,
}

fn bucket(part: usize, total: usize) -> String {
    if part == 0 {
        return "0".into();
    }
    // smallest b with part/total <= b/10
    let mut b = 1;
    while part * 10 > b * total {
        b += 1;
    }
    format!("{}_to_{}", 10 * (b - 1), 10 * b)
}

fn count(t1: &[u8], t2: &[u8], pred: impl Fn(u8, u8) -> bool) -> usize {
    let mut n = 0;
    for p in 0..t1.len() {
        if pred(t1[p], t2[p]) {
            n += 1;
        }
    }
    n
}

fn bits(t1: &[u8], t2: &[u8], pred: impl Fn(u8, u8) -> bool) -> Vec<bool> {
    let mut out = vec![false; t1.len()];
    for p in 0..t1.len() {
        out[p] = pred(t1[p], t2[p]);
    }
    out
}

fn gross(t1: &[u8], t2: &[u8], c: u8) -> usize {
    count(t1, t2, |a, b| (a == c && b != c) || (b == c && a != c))
}

fn empty(t1: &[u8], token: &str) -> OracleAnswer {
    OracleAnswer {
        token: token.into(),
        bits: vec![false; t1.len()],
    }
}

/// `qtype` is the short code; `subject` is required for all but LC/SC.
pub fn answer(
    t1: &[u8],
    t2: &[u8],
    names: &[String],
    qtype: &str,
    subject: Option<usize>,
) -> OracleAnswer {
    let k = names.len();
    let either = |c: u8| move |a: u8, b: u8| (a == c) != (b == c);
    match qtype {
        "CN" => {
            let c = subject.unwrap() as u8;
            if gross(t1, t2, c) > 0 {
                OracleAnswer {
                    token: "yes".into(),
                    bits: bits(t1, t2, either(c)),
                }
            } else {
                empty(t1, "no")
            }
        }
        "CtW" | "CfW" => {
            let c = subject.unwrap() as u8;
            let mut best: Option<(u8, usize)> = None;
            for other in 0..k as u8 {
                if other == c {
                    continue;
                }
                let n = if qtype == "CtW" {
                    count(t1, t2, |a, b| a == c && b == other)
                } else {
                    count(t1, t2, |a, b| a == other && b == c)
                };
                if n > 0 && best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((other, n));
                }
            }
            match best {
                None => empty(t1, "none"),
                Some((o, _)) => OracleAnswer {
                    token: names[o as usize].clone(),
                    bits: if qtype == "CtW" {
                        bits(t1, t2, |a, b| a == c && b == o)
                    } else {
                        bits(t1, t2, |a, b| a == o && b == c)
                    },
                },
            }
        }
        "IN" | "DN" => {
            let c = subject.unwrap() as u8;
            let before = t1.iter().filter(|&&a| a == c).count();
            let after = t2.iter().filter(|&&b| b == c).count();
            let yes = if qtype == "IN" {
                after > before
            } else {
                after < before
            };
            if !yes {
                return empty(t1, "no");
            }
            OracleAnswer {
                token: "yes".into(),
                bits: if qtype == "IN" {
                    bits(t1, t2, |a, b| b == c && a != c)
                } else {
                    bits(t1, t2, |a, b| a == c && b != c)
                },
            }
        }
        "LC" | "SC" => {
            let mut best: Option<(u8, usize)> = None;
            for c in 0..k as u8 {
                let n = gross(t1, t2, c);
                if n == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, bn)) => {
                        if qtype == "LC" {
                            n > bn
                        } else {
                            n < bn
                        }
                    }
                };
                if better {
                    best = Some((c, n));
                }
            }
            match best {
                None => empty(t1, "none"),
                Some((c, _)) => OracleAnswer {
                    token: names[c as usize].clone(),
                    bits: bits(t1, t2, either(c)),
                },
            }
        }
        "CR" => {
            let c = subject.unwrap() as u8;
            let n = gross(t1, t2, c);
            if n == 0 {
                return empty(t1, "0");
            }
            OracleAnswer {
                token: bucket(n, t1.len()),
                bits: bits(t1, t2, either(c)),
            }
        }
        other => panic!("unknown question type {other}"),
    }
}
