/* SPDX-License-Identifier: MIT OR Apache-2.0 */
#include <stdio.h>
#include <string.h>

#include "reward_lens.h"

int main(void) {
  RlModel *m = NULL;
  if (rl_model_build_seeded(2, 32, 4, 64, 42, &m) != RL_STATUS_OK) {
    fprintf(stderr, "build: %s\n", rl_last_error_message());
    return 1;
  }
  double r = 0.0;
  if (rl_model_score(m, "q r", "a b c", &r) != RL_STATUS_OK) return 2;
  double w[32];
  size_t n = 0;
  if (rl_model_reward_direction(m, w, 4, &n) != RL_STATUS_BUFFER_TOO_SMALL || n != 32) return 3;
  if (rl_model_reward_direction(m, w, 32, &n) != RL_STATUS_OK) return 4;
  char *json = NULL;
  if (rl_attribute(m, "a", "b c", "d", &json) != RL_STATUS_OK) return 5;
  if (strstr(json, "differential_contributions") == NULL) return 6;
  rl_string_free(json);
  if (rl_model_score(m, "a", "not-a-word", &r) != RL_STATUS_FORMAT) return 7;
  if (rl_last_error_message() == NULL) return 8;
  printf("%zu %.17g\n", rl_model_n_layers(m), r);
  rl_model_free(m);
  return 0;
}
