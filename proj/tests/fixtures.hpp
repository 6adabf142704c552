// Shared C fixtures for the test suites.
#pragma once

namespace fixtures {

inline constexpr const char *kDotProduct = R"(int vec[512] __attribute__((aligned(16)));
__attribute__((noinline))
int dot_product () {
    int sum = 0;
    for(int i = 0; i<512; i++){
        sum += vec[i]*vec[i];
    }
    return sum;
}
)";

inline constexpr const char *kExample1 = R"(int assign1[1024], assign2[1024], assign3[1024];
short short_a[1024], short_b[1024], short_c[1024];
void example1(int N) {
  int i;
  for (i = 0; i < N-1; i+=2) {
       assign1[i] = (int) short_a[i];
       assign1[i+1] = (int) short_a[i+1];
       assign2[i] = (int) short_b[i];
       assign2[i+1] = (int) short_b[i+1];
       assign3[i] = (int) short_c[i];
      assign3[i+1] = (int) short_c[i+1];
  }
}
)";

inline constexpr const char *kExample1Loop = R"(for (i = 0; i < N-1; i+=2) {
     assign1[i] = (int) short_a[i];
     assign1[i+1] = (int) short_a[i+1];
     assign2[i] = (int) short_b[i];
     assign2[i+1] = (int) short_b[i+1];
     assign3[i] = (int) short_c[i];
    assign3[i+1] = (int) short_c[i+1];
})";

inline constexpr const char *kExample2 = R"(int G[64][128];
void example2(int x) {
  int i, j;
  for (i=0; i<64; i++) {
    for (j=0; j<128; j++) {
       G[i][j] = x;
     }
  }
}
)";

inline constexpr const char *kExample3 = R"(int a[2048], b[2048];
void example3(void) {
  int i;
  for (i=0; i<1024*2; i++){
    int j = a[i];
    b[i] = (j > 255 ? 255 : 0);
  }
}
)";

inline constexpr const char *kExample4 = R"(float A[32][64], B[64][48], C[32][48];
void example4(float alpha) {
  int i, j, k;
  for (i = 0; i < 32; i++){
    for (j = 0; j < 48; j++){
        float sum = 0;
        for (k = 0; k < 64; k++) {
            sum += alpha*A[i][k] * B[k][j];
        }
        C[i][j] = sum;
    }
  }
}
)";

inline constexpr const char *kExample5 = R"(float a[512], b[1024], c[1024], d[512];
void example5(void) {
  int i;
  for (i = 0; i < 1024/2-1; i++){
    a[i] = b[2*i+1] * c[2*i+1] - b[2*i] * c[2*i];
    d[i] = b[2*i] * c[2*i+1] + b[2*i+1] * c[2*i];
  }
}
)";

inline constexpr const char *kTwoSiblings = R"(float x[100], y[100];
void two(void) {
  int i;
  for (i = 0; i < 100; i++)
    x[i] = 0;
  for (i = 0; i < 100; i++) {
    y[i] = x[i] + 1;
  }
}
)";

} // namespace fixtures
