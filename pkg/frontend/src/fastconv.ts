/**
 * Replacement Conv2DBackpropFilter kernel for the tfjs cpu backend.
 *
 * The stock cpu kernel walks a 7-deep loop nest with per-element
 * TensorBuffer.get() calls; on this package's training shapes one filter
 * gradient costs seconds, which puts a full training run far outside its
 * time budget. The math here is identical (same conv geometry from
 * computeConv2DInfo, same accumulation in float64 via plain JS numbers)
 * but runs on flat typed arrays with the channel product innermost, which
 * is roughly two orders of magnitude faster. Anything the fast path does
 * not cover (channels-first layout, non-float32 inputs) falls through to
 * the original kernel.
 */

import * as tf from '@tensorflow/tfjs';

const KERNEL = 'Conv2DBackpropFilter';
const BACKEND = 'cpu';

let installed = false;

export function installFastConvGrad(): void {
  if (installed) return;
  const stock = tf.getKernel(KERNEL, BACKEND);
  if (stock == null) {
    throw new Error(`no ${KERNEL} kernel registered for backend ${BACKEND}`);
  }
  const stockFunc = stock.kernelFunc;

  const fastFunc: typeof stockFunc = (args: any) => {
    const { x, dy } = args.inputs;
    const backend = args.backend as any;
    const { strides, pad, dataFormat, dimRoundingMode, filterShape } = args.attrs;

    const $dataFormat = tf.backend_util.convertConv2DDataFormat(dataFormat);
    const convInfo = tf.backend_util.computeConv2DInfo(
      x.shape,
      filterShape,
      strides,
      1 /* dilations */,
      pad,
      dimRoundingMode,
      false /* depthwise */,
      $dataFormat,
    );
    if (convInfo.dataFormat !== 'channelsLast' || x.dtype !== 'float32' || dy.dtype !== 'float32') {
      return stockFunc(args);
    }

    const {
      batchSize,
      inHeight,
      inWidth,
      inChannels,
      outHeight,
      outWidth,
      outChannels,
      filterHeight,
      filterWidth,
      strideHeight,
      strideWidth,
    } = convInfo;
    const topPad = convInfo.padInfo.top;
    const leftPad = convInfo.padInfo.left;

    const xVals: Float32Array = backend.data.get(x.dataId).values;
    const dyVals: Float32Array = backend.data.get(dy.dataId).values;
    const dW = new Float64Array(filterHeight * filterWidth * inChannels * outChannels);

    for (let b = 0; b < batchSize; b++) {
      const xBatch = b * inHeight * inWidth * inChannels;
      const dyBatch = b * outHeight * outWidth * outChannels;
      for (let yR = 0; yR < outHeight; yR++) {
        const xRBase = yR * strideHeight - topPad;
        const dyRow = dyBatch + yR * outWidth * outChannels;
        for (let yC = 0; yC < outWidth; yC++) {
          const xCBase = yC * strideWidth - leftPad;
          const dyOff = dyRow + yC * outChannels;
          for (let wR = 0; wR < filterHeight; wR++) {
            const xR = xRBase + wR;
            if (xR < 0 || xR >= inHeight) continue;
            const xRow = xBatch + xR * inWidth * inChannels;
            for (let wC = 0; wC < filterWidth; wC++) {
              const xC = xCBase + wC;
              if (xC < 0 || xC >= inWidth) continue;
              const xOff = xRow + xC * inChannels;
              const wOff = (wR * filterWidth + wC) * inChannels * outChannels;
              for (let d1 = 0; d1 < inChannels; d1++) {
                const xv = xVals[xOff + d1];
                const row = wOff + d1 * outChannels;
                for (let d2 = 0; d2 < outChannels; d2++) {
                  dW[row + d2] += xv * dyVals[dyOff + d2];
                }
              }
            }
          }
        }
      }
    }

    const out = new Float32Array(dW.length);
    out.set(dW as unknown as ArrayLike<number>);
    return backend.makeTensorInfo(
      [filterHeight, filterWidth, inChannels, outChannels],
      'float32',
      out,
    );
  };

  tf.unregisterKernel(KERNEL, BACKEND);
  tf.registerKernel({ kernelName: KERNEL, backendName: BACKEND, kernelFunc: fastFunc });
  installed = true;
}
