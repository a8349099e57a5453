// Generated CUDA translation; view bookkeeping erased.
#include <cuda_runtime.h>

#define BDL_BARRIER_ARM(i)
#define BDL_BARRIER_ARRIVE(i) __threadfence_block();
#define BDL_BARRIER_WAIT(i) __syncthreads();
#define BDL_CP_ASYNC(dst, src) (dst) = (src);

extern __shared__ unsigned char bdl_smem[];

__global__ void bdl_main(int* g) {
    const int smem_base = 0;
    (void)smem_base;
    {
        const int u0 = blockIdx.x;
        {
            const int u1 = u0 % 1;
            {
                const int u2 = threadIdx.x;
                {
                    const int u3 = u2 % 2;
                    auto* y = g + 1 * u3;
                    y[0] = (u3 + 5);
                    BDL_BARRIER_ARRIVE(0);
                    BDL_BARRIER_WAIT(0);
                    auto* z = g + 1 * u3;
                    int v = z[(1 - u3)];
                    ;
                }
            }
        }
    }
}
