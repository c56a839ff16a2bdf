/// One layer's contribution to receptive-field growth. Kernels are square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldLayer {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl FieldLayer {
    pub const fn new(kernel: usize, stride: usize, dilation: usize) -> Self {
        FieldLayer {
            kernel,
            stride,
            dilation,
        }
    }
}

impl From<(usize, usize, usize)> for FieldLayer {
    fn from((kernel, stride, dilation): (usize, usize, usize)) -> Self {
        FieldLayer::new(kernel, stride, dilation)
    }
}

/// Theoretical receptive field (height, width) of a single output unit of
/// the last layer. Each layer widens the field by `dilation*(kernel-1)`
/// input-space steps of the accumulated stride. An empty stack is the
/// identity and sees a single pixel.
pub fn receptive_field(layers: &[FieldLayer]) -> (usize, usize) {
    let mut field = 1;
    let mut jump = 1;
    for l in layers {
        field += l.dilation * (l.kernel.saturating_sub(1)) * jump;
        jump *= l.stride;
    }
    (field, field)
}
