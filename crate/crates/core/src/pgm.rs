//! Binary portable graymap (P5) contact sheets of square binary images.

/// Pixels between tiles and around the sheet border.
const GAP: usize = 1;

/// Lays `images` (each `side × side`, row-major bits) out on a grid with
/// `ceil(sqrt(count))` columns. Set bits are drawn white on black; the
/// gaps are mid-gray so tile edges stay visible.
pub fn contact_sheet(images: &[Vec<u8>], side: usize) -> Vec<u8> {
    let count = images.len().max(1);
    let cols = (1..=count).find(|c| c * c >= count).unwrap_or(1);
    let rows = count.div_ceil(cols);
    let width = cols * (side + GAP) + GAP;
    let height = rows * (side + GAP) + GAP;
    let mut pixels = vec![128u8; width * height];
    for (i, img) in images.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (side + GAP) + GAP, (i % cols) * (side + GAP) + GAP);
        for y in 0..side {
            for x in 0..side {
                pixels[(r0 + y) * width + c0 + x] = if img[y * side + x] == 1 { 255 } else { 0 };
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

/// Side length `s` with `s² = n`, if any.
pub fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}
